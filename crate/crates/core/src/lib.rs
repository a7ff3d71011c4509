//! Regional real-wage equilibria and panel estimation for New Economic
//! Geography wage equations.
//!
//! The crate is split along the pipeline it serves:
//!
//! - [`neg_core`]: short-run equilibrium of the reduced real-wage system
//!   (price indices, market-access wages, real wages) and a damped
//!   fixed-point solver.
//! - [`datagen`]: CSV ingestion, validation, and seeded synthetic panels.
//! - [`specs`]: builds the log-linear wage and agglomeration regressions
//!   from a panel dataset.
//! - [`panel`]: pooled OLS, LSDV fixed effects, random-effects GLS, the
//!   Hausman contrast and residual diagnostics.
//! - [`report`]: table rendering and flat CSV export.
//! - [`cli`]: the `negpanel` command-line front end.

pub mod cli;
pub mod datagen;
pub mod linalg;
pub mod neg_core;
pub mod panel;
pub mod report;
pub mod rng;
pub mod specs;

pub use datagen::{PanelDataset, PanelObservation, SyntheticConfig};
pub use neg_core::{EquilibriumState, NegParameters, SpatialEconomy};
pub use panel::{DesignMatrix, Effects, Estimator, FitResult, HausmanResult, PanelIndex};
pub use specs::SpecName;
