//! Short-run equilibrium of the reduced real-wage system.
//!
//! For an economy of `R` regions with incomes `Y`, manufacturing labor `λ`,
//! iceberg transport factors `T` and CES parameters `σ`, `μ`:
//!
//! ```text
//! G_r = [ Σ_s λ_s (w_s T_sr)^(1-σ) ]^(1/(1-σ))        price index
//! w_r = [ Σ_s Y_s T_rs^(1-σ) G_s^(σ-1) ]^(1/σ)        market-access wage
//! ω_r = w_r G_r^(-μ)                                  real wage
//! ```
//!
//! Taking logs of the reduced form gives the linear relation used by the
//! estimation side of the crate:
//! `ln ω_r = (1/σ) ln B1_r − μ/(1−σ) ln B2_r`, with `B1_r`, `B2_r` the two
//! bracketed sums above.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NegError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid economy: {0}")]
    InvalidEconomy(String),
    #[error("non-positive wage {value} in region {region}")]
    NonPositiveWage { region: usize, value: f64 },
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),
    #[error("price-index sum vanishes for region {region} (no labor anywhere)")]
    DegenerateLabor { region: usize },
    #[error("market-access sum vanishes for region {region} (no income anywhere)")]
    DegenerateIncome { region: usize },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, NegError>;

/// CES structure of the manufacturing sector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegParameters {
    sigma: f64,
    mu: f64,
}

impl NegParameters {
    pub const DEFAULT_SIGMA: f64 = 5.0;
    pub const DEFAULT_MU: f64 = 0.4;

    pub fn new(sigma: f64, mu: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 1.0) {
            return Err(NegError::InvalidParameters(format!(
                "sigma must be finite and > 1, got {sigma}"
            )));
        }
        if !(mu.is_finite() && mu > 0.0 && mu < 1.0) {
            return Err(NegError::InvalidParameters(format!(
                "mu must lie in (0, 1), got {mu}"
            )));
        }
        Ok(Self { sigma, mu })
    }

    /// Elasticity of substitution between varieties.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Manufacturing share of expenditure.
    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl Default for NegParameters {
    fn default() -> Self {
        Self {
            sigma: Self::DEFAULT_SIGMA,
            mu: Self::DEFAULT_MU,
        }
    }
}

/// A fully parameterized multi-region economy.
///
/// The diagonal of the transport matrix is forced to 1 on construction;
/// whatever the caller supplied there is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEconomy {
    regions: Vec<String>,
    income: Vec<f64>,
    labor: Vec<f64>,
    immobile_income: Vec<f64>,
    transport: DMatrix<f64>,
    params: NegParameters,
}

impl SpatialEconomy {
    pub fn new(
        regions: Vec<String>,
        income: Vec<f64>,
        labor: Vec<f64>,
        immobile_income: Vec<f64>,
        mut transport: DMatrix<f64>,
        params: NegParameters,
    ) -> Result<Self> {
        let n = regions.len();
        if n == 0 {
            return Err(NegError::InvalidEconomy("no regions".into()));
        }
        for (name, v) in [
            ("income", &income),
            ("labor", &labor),
            ("immobile_income", &immobile_income),
        ] {
            if v.len() != n {
                return Err(NegError::InvalidEconomy(format!(
                    "{name} has {} entries for {n} regions",
                    v.len()
                )));
            }
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
                return Err(NegError::InvalidEconomy(format!(
                    "{name}[{i}] = {x} must be finite and non-negative"
                )));
            }
        }
        if labor.iter().sum::<f64>() <= 0.0 {
            return Err(NegError::InvalidEconomy("total labor must be positive".into()));
        }
        if transport.nrows() != n || transport.ncols() != n {
            return Err(NegError::InvalidEconomy(format!(
                "transport matrix is {}x{}, expected {n}x{n}",
                transport.nrows(),
                transport.ncols()
            )));
        }
        for r in 0..n {
            transport[(r, r)] = 1.0;
        }
        for r in 0..n {
            for s in 0..n {
                let t = transport[(r, s)];
                if !(t.is_finite() && t >= 1.0) {
                    return Err(NegError::InvalidEconomy(format!(
                        "transport[{r}][{s}] = {t} must be finite and >= 1"
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for r in &regions {
            if !seen.insert(r) {
                return Err(NegError::InvalidEconomy(format!("duplicate region '{r}'")));
            }
        }
        Ok(Self {
            regions,
            income,
            labor,
            immobile_income,
            transport,
            params,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn income(&self) -> &[f64] {
        &self.income
    }

    pub fn labor(&self) -> &[f64] {
        &self.labor
    }

    pub fn immobile_income(&self) -> &[f64] {
        &self.immobile_income
    }

    pub fn transport(&self) -> &DMatrix<f64> {
        &self.transport
    }

    pub fn params(&self) -> NegParameters {
        self.params
    }

    /// Copy with `income` and `immobile_income` multiplied by `factor`.
    pub fn with_income_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.income.iter_mut().for_each(|y| *y *= factor);
        out.immobile_income.iter_mut().for_each(|y| *y *= factor);
        out
    }

    /// Copy with regions reordered so that new region `i` is old region `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_regions();
        assert_eq!(perm.len(), n, "permutation length");
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        Self {
            regions: perm.iter().map(|&p| self.regions[p].clone()).collect(),
            income: pick(&self.income),
            labor: pick(&self.labor),
            immobile_income: pick(&self.immobile_income),
            transport: DMatrix::from_fn(n, n, |r, s| self.transport[(perm[r], perm[s])]),
            params: self.params,
        }
    }
}

/// A solved short-run equilibrium, expressed in the labor-weighted numeraire.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumState {
    pub nominal_wage: Vec<f64>,
    pub price_index: Vec<f64>,
    pub real_wage: Vec<f64>,
    pub iterations: usize,
    /// Max relative fixed-point defect of the returned state.
    pub residual: f64,
    /// Factor applied to incomes (exogenous `Y`, or immobile income when
    /// incomes are endogenous) under which the normalized state is an exact
    /// fixed point. The system is homogeneous, so this is the price of
    /// pinning the mean wage to 1.
    pub income_scale: f64,
}

fn check_wages(wages: &[f64], n: usize) -> Result<()> {
    if wages.len() != n {
        return Err(NegError::NonPositiveInput(format!(
            "expected {n} wages, got {}",
            wages.len()
        )));
    }
    match wages.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        Some((region, &value)) => Err(NegError::NonPositiveWage { region, value }),
        None => Ok(()),
    }
}

fn check_positive(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(NegError::NonPositiveInput(format!(
            "expected {n} entries in {name}, got {}",
            v.len()
        )));
    }
    match v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
        Some((i, x)) => Err(NegError::NonPositiveInput(format!("{name}[{i}] = {x}"))),
        None => Ok(()),
    }
}

/// The price-index bracket `B2_r = Σ_s λ_s (w_s T_sr)^(1-σ)`.
fn price_bracket(econ: &SpatialEconomy, wages: &[f64], r: usize) -> f64 {
    let e = 1.0 - econ.params.sigma;
    (0..econ.n_regions())
        .map(|s| econ.labor[s] * (wages[s] * econ.transport[(s, r)]).powf(e))
        .sum()
}

/// The market-access bracket `B1_r = Σ_s Y_s T_rs^(1-σ) G_s^(σ-1)`.
fn access_bracket(econ: &SpatialEconomy, income: &[f64], g: &[f64], r: usize) -> f64 {
    let sigma = econ.params.sigma;
    (0..econ.n_regions())
        .map(|s| income[s] * econ.transport[(r, s)].powf(1.0 - sigma) * g[s].powf(sigma - 1.0))
        .sum()
}

/// CES price index facing region `r` given nominal wages everywhere.
pub fn price_index(econ: &SpatialEconomy, wages: &[f64], r: usize) -> Result<f64> {
    check_wages(wages, econ.n_regions())?;
    if r >= econ.n_regions() {
        return Err(NegError::InvalidEconomy(format!("region index {r} out of range")));
    }
    let b = price_bracket(econ, wages, r);
    if b <= 0.0 {
        return Err(NegError::DegenerateLabor { region: r });
    }
    Ok(b.powf(1.0 / (1.0 - econ.params.sigma)))
}

/// Price indices for every region.
pub fn price_indices(econ: &SpatialEconomy, wages: &[f64]) -> Result<Vec<f64>> {
    (0..econ.n_regions()).map(|r| price_index(econ, wages, r)).collect()
}

fn wage_from_access(econ: &SpatialEconomy, income: &[f64], g: &[f64], r: usize) -> Result<f64> {
    let b = access_bracket(econ, income, g, r);
    if b <= 0.0 {
        return Err(NegError::DegenerateIncome { region: r });
    }
    Ok(b.powf(1.0 / econ.params.sigma))
}

/// Nominal wage that market access assigns to region `r`, using the
/// economy's own (exogenous) incomes.
pub fn nominal_wage_rhs(econ: &SpatialEconomy, price_indices: &[f64], r: usize) -> Result<f64> {
    check_positive("price_indices", price_indices, econ.n_regions())?;
    if r >= econ.n_regions() {
        return Err(NegError::InvalidEconomy(format!("region index {r} out of range")));
    }
    wage_from_access(econ, &econ.income, price_indices, r)
}

/// `ω = w · G^(−μ)`.
pub fn real_wage(w: f64, g: f64, params: NegParameters) -> Result<f64> {
    if !(w.is_finite() && w > 0.0) {
        return Err(NegError::NonPositiveInput(format!("wage {w}")));
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(NegError::NonPositiveInput(format!("price index {g}")));
    }
    Ok(w * g.powf(-params.mu))
}

/// Income identity `Y_r = μ λ_r w_r + (1 − μ) φ_r` for a share `μ ∈ [0, 1]`.
pub fn income_identity(mu: f64, labor: &[f64], wages: &[f64], immobile: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(NegError::InvalidParameters(format!("mu must lie in [0, 1], got {mu}")));
    }
    check_wages(wages, labor.len())?;
    if immobile.len() != labor.len() {
        return Err(NegError::NonPositiveInput("immobile income length mismatch".into()));
    }
    Ok(labor
        .iter()
        .zip(wages)
        .zip(immobile)
        .map(|((l, w), phi)| mu * l * w + (1.0 - mu) * phi)
        .collect())
}

/// Endogenous regional incomes at the given wages.
pub fn income(econ: &SpatialEconomy, wages: &[f64]) -> Result<Vec<f64>> {
    income_identity(econ.params.mu, &econ.labor, wages, &econ.immobile_income)
}

/// Reduced-form real wage from the two bracket sums.
pub fn reduced_real_wage(b1: f64, b2: f64, params: NegParameters) -> Result<f64> {
    check_brackets(b1, b2)?;
    let NegParameters { sigma, mu } = params;
    Ok(b1.powf(1.0 / sigma) * b2.powf(-mu / (1.0 - sigma)))
}

/// Log-linear real wage: `(1/σ) ln B1 − μ/(1−σ) ln B2`.
pub fn log_real_wage(b1: f64, b2: f64, params: NegParameters) -> Result<f64> {
    check_brackets(b1, b2)?;
    let NegParameters { sigma, mu } = params;
    Ok(b1.ln() / sigma - mu / (1.0 - sigma) * b2.ln())
}

fn check_brackets(b1: f64, b2: f64) -> Result<()> {
    if !(b1.is_finite() && b1 > 0.0 && b2.is_finite() && b2 > 0.0) {
        return Err(NegError::NonPositiveInput(format!("brackets ({b1}, {b2})")));
    }
    Ok(())
}

/// Bracket sums `(B1_r, B2_r)` evaluated at a solved state, with incomes
/// rescaled by the state's `income_scale`.
pub fn wage_brackets(
    econ: &SpatialEconomy,
    state: &EquilibriumState,
    endogenous_income: bool,
    r: usize,
) -> Result<(f64, f64)> {
    let scaled = econ.with_income_scaled(state.income_scale);
    let y = effective_income(&scaled, &state.nominal_wage, endogenous_income)?;
    Ok((
        access_bracket(&scaled, &y, &state.price_index, r),
        price_bracket(&scaled, &state.nominal_wage, r),
    ))
}

fn effective_income(econ: &SpatialEconomy, wages: &[f64], endogenous: bool) -> Result<Vec<f64>> {
    if endogenous {
        income(econ, wages)
    } else {
        Ok(econ.income.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub endogenous_income: bool,
    /// Relaxation weight on each update, in (0, 1].
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            endogenous_income: false,
            damping: 0.5,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Largest relative defect of `(w, G)` against the wage and price-index
/// equations, in levels.
fn level_defect(econ: &SpatialEconomy, w: &[f64], g: &[f64], endogenous: bool) -> Result<f64> {
    let y = effective_income(econ, w, endogenous)?;
    let mut worst = 0.0_f64;
    for r in 0..econ.n_regions() {
        let w_star = wage_from_access(econ, &y, g, r)?;
        let g_star = price_index(econ, w, r)?;
        worst = worst
            .max((w[r] - w_star).abs() / w[r])
            .max((g[r] - g_star).abs() / g[r]);
    }
    Ok(worst)
}

/// Post-hoc fixed-point defect of a returned state against `econ`, with
/// incomes rescaled by `state.income_scale`.
pub fn fixed_point_defect(econ: &SpatialEconomy, state: &EquilibriumState, endogenous_income: bool) -> Result<f64> {
    let scaled = econ.with_income_scaled(state.income_scale);
    level_defect(&scaled, &state.nominal_wage, &state.price_index, endogenous_income)
}

/// Solves the wage/price-index system by damped successive substitution.
///
/// The level fixed point is found first; wages and price indices are then
/// divided by the labor-weighted mean wage so that it equals 1. Because the
/// system is homogeneous of degree one in (incomes, wages, prices), the
/// normalized state solves the same economy with incomes multiplied by
/// `income_scale`.
pub fn solve_equilibrium(econ: &SpatialEconomy, opts: &SolverOptions) -> Result<EquilibriumState> {
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(NegError::InvalidParameters(format!(
            "damping must lie in (0, 1], got {}",
            opts.damping
        )));
    }
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(NegError::InvalidParameters(format!("tol must be positive, got {}", opts.tol)));
    }
    if opts.max_iter == 0 {
        return Err(NegError::InvalidParameters("max_iter must be at least 1".into()));
    }
    if opts.endogenous_income {
        if econ.immobile_income.iter().all(|&p| p == 0.0) {
            return Err(NegError::InvalidEconomy(
                "endogenous income needs some positive immobile income to pin the wage level".into(),
            ));
        }
    } else if econ.income.iter().all(|&y| y == 0.0) {
        return Err(NegError::InvalidEconomy("all incomes are zero".into()));
    }

    let n = econ.n_regions();
    let d = opts.damping;
    let mut w = vec![1.0; n];
    let mut g = price_indices(econ, &w)?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let g_target = price_indices(econ, &w)?;
        for (gr, t) in g.iter_mut().zip(&g_target) {
            *gr = (1.0 - d) * *gr + d * t;
        }
        let y = effective_income(econ, &w, opts.endogenous_income)?;
        for r in 0..n {
            let target = wage_from_access(econ, &y, &g, r)?;
            w[r] = (1.0 - d) * w[r] + d * target;
        }
        residual = level_defect(econ, &w, &g, opts.endogenous_income)?;
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            break;
        }
    }
    if !(residual <= opts.tol) {
        return Err(NegError::NoConvergence { iterations, residual });
    }

    let total_labor: f64 = econ.labor.iter().sum();
    let mean_wage = econ.labor.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / total_labor;
    let nominal_wage: Vec<f64> = w.iter().map(|x| x / mean_wage).collect();
    let price_index: Vec<f64> = g.iter().map(|x| x / mean_wage).collect();
    let real_wage = nominal_wage
        .iter()
        .zip(&price_index)
        .map(|(&w, &g)| real_wage(w, g, econ.params))
        .collect::<Result<Vec<_>>>()?;

    let mut state = EquilibriumState {
        nominal_wage,
        price_index,
        real_wage,
        iterations,
        residual: 0.0,
        income_scale: 1.0 / mean_wage,
    };
    state.residual = fixed_point_defect(econ, &state, opts.endogenous_income)?;
    Ok(state)
}
