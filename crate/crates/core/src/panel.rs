//! Estimators for unbalanced region × industry × year panels.
//!
//! Three estimators share one [`DesignMatrix`]:
//!
//! - pooled OLS ([`ols_fit`]),
//! - least squares with dummy variables ([`lsdv_fit`]), one dummy per group
//!   of the effects design,
//! - random-effects GLS ([`random_effects_fit`]) with Swamy–Arora variance
//!   components and per-unit quasi-demeaning factors for unbalanced panels.
//!
//! [`hausman_test`] contrasts the fixed- and random-effects slopes. All
//! fits report R², a panel Durbin–Watson statistic computed only across
//! consecutive years of the same unit, two-sided t-based significance
//! levels, residual degrees of freedom and residual standard deviation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::linalg::{symmetrize, PivotedQr};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("rank-deficient design; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("column '{0}' has no within-group variation")]
    AllWithinVariationZero(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("coefficient '{0}' missing from one of the fits")]
    NameMismatch(String),
    #[error("no unit has two consecutive periods")]
    NoConsecutivePairs,
    #[error("residuals are identically zero")]
    ZeroResiduals,
}

pub type Result<T> = std::result::Result<T, PanelError>;

/// Name given to the intercept column.
pub const CONST: &str = "const";

/// Position of one observation in the panel. The cross-section unit is the
/// (region, industry) pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PanelIndex {
    pub region: String,
    pub industry: String,
    pub period: i32,
}

impl PanelIndex {
    pub fn new(region: impl Into<String>, industry: impl Into<String>, period: i32) -> Self {
        Self {
            region: region.into(),
            industry: industry.into(),
            period,
        }
    }

    pub fn unit(&self) -> (&str, &str) {
        (&self.region, &self.industry)
    }
}

/// Which group dummies the fixed-effects estimator absorbs, and which
/// grouping random effects use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effects {
    None,
    Unit,
    Region,
    Industry,
}

impl Effects {
    pub fn as_str(self) -> &'static str {
        match self {
            Effects::None => "none",
            Effects::Unit => "unit",
            Effects::Region => "region",
            Effects::Industry => "industry",
        }
    }

    fn group_key(self, idx: &PanelIndex) -> String {
        match self {
            Effects::None => String::new(),
            Effects::Unit => format!("{}|{}", idx.region, idx.industry),
            Effects::Region => idx.region.clone(),
            Effects::Industry => idx.industry.clone(),
        }
    }
}

impl fmt::Display for Effects {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Effects {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Effects::None),
            "unit" => Ok(Effects::Unit),
            "region" => Ok(Effects::Region),
            "industry" => Ok(Effects::Industry),
            other => Err(format!("unknown effects design '{other}' (none|unit|region|industry)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Lsdv,
    RandomEffects,
    Pooled,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Lsdv => "lsdv",
            Estimator::RandomEffects => "re",
            Estimator::Pooled => "pooled",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Lsdv => "LSDV",
            Estimator::RandomEffects => "Random effects",
            Estimator::Pooled => "Pooled OLS",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lsdv" | "fe" => Ok(Estimator::Lsdv),
            "re" | "random_effects" => Ok(Estimator::RandomEffects),
            "pooled" | "ols" => Ok(Estimator::Pooled),
            other => Err(format!("unknown estimator '{other}' (lsdv|re|pooled)")),
        }
    }
}

/// Response, regressors and panel positions for one regression.
///
/// `regressors` never contains the intercept; `intercept` says whether
/// pooled OLS and random effects estimate one (LSDV absorbs it into the
/// group dummies).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    label: String,
    response_name: String,
    response: DVector<f64>,
    regressors: DMatrix<f64>,
    names: Vec<String>,
    index: Vec<PanelIndex>,
    effects: Effects,
    intercept: bool,
}

impl DesignMatrix {
    pub fn new(
        response: Vec<f64>,
        columns: Vec<Vec<f64>>,
        names: Vec<String>,
        index: Vec<PanelIndex>,
        effects: Effects,
        intercept: bool,
    ) -> Result<Self> {
        let n = response.len();
        let k = columns.len();
        if names.len() != k {
            return Err(PanelError::InvalidDesign(format!("{k} columns but {} names", names.len())));
        }
        if index.len() != n {
            return Err(PanelError::InvalidDesign(format!("{n} observations but {} index entries", index.len())));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != n) {
            return Err(PanelError::InvalidDesign(format!("column '{}' has wrong length", names[c])));
        }
        let regressors = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
        Self::from_parts(DVector::from_vec(response), regressors, names, index, effects, intercept)
    }

    pub fn from_parts(
        response: DVector<f64>,
        regressors: DMatrix<f64>,
        names: Vec<String>,
        index: Vec<PanelIndex>,
        effects: Effects,
        intercept: bool,
    ) -> Result<Self> {
        let n = response.len();
        if regressors.nrows() != n || index.len() != n || names.len() != regressors.ncols() {
            return Err(PanelError::InvalidDesign("inconsistent dimensions".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name == CONST && intercept {
                return Err(PanelError::InvalidDesign("'const' is reserved for the implicit intercept".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(PanelError::InvalidDesign(format!("duplicate column name '{name}'")));
            }
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(PanelError::InvalidDesign(format!("non-finite response at row {i}")));
        }
        for j in 0..regressors.ncols() {
            if let Some(i) = regressors.column(j).iter().position(|v| !v.is_finite()) {
                return Err(PanelError::InvalidDesign(format!("non-finite '{}' at row {i}", names[j])));
            }
        }
        let mut keys = HashSet::new();
        for idx in &index {
            if !keys.insert(idx) {
                return Err(PanelError::InvalidDesign(format!(
                    "duplicate observation ({}, {}, {})",
                    idx.region, idx.industry, idx.period
                )));
            }
        }
        let d = Self {
            label: String::new(),
            response_name: "y".into(),
            response,
            regressors,
            names,
            index,
            effects,
            intercept,
        };
        let needed = d.ncols() + if intercept { 1 } else { 0 } + d.n_dummies();
        if n <= needed {
            return Err(PanelError::InsufficientData(format!(
                "{n} observations for {needed} mean parameters"
            )));
        }
        Ok(d)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = name.into();
        self
    }

    pub fn with_effects(self, effects: Effects) -> Result<Self> {
        let d = Self { effects, ..self };
        Self::from_parts(d.response, d.regressors, d.names, d.index, d.effects, d.intercept)
            .map(|x| x.with_label(d.label).with_response_name(d.response_name))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn regressors(&self) -> &DMatrix<f64> {
        &self.regressors
    }

    /// Regressor names, excluding the intercept.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Coefficient slots of the specification: `const` first when the
    /// design carries an intercept, then the regressors.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.names.len() + 1);
        if self.intercept {
            out.push(CONST.to_string());
        }
        out.extend(self.names.iter().cloned());
        out
    }

    pub fn index(&self) -> &[PanelIndex] {
        &self.index
    }

    pub fn effects(&self) -> Effects {
        self.effects
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn nobs(&self) -> usize {
        self.response.len()
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    fn n_dummies(&self) -> usize {
        match self.effects {
            Effects::None => 0,
            e => self.groups(e).1,
        }
    }

    /// Group id per observation (ids ordered by sorted group key) and the
    /// number of groups.
    fn groups(&self, effects: Effects) -> (Vec<usize>, usize) {
        let keys: Vec<String> = self.index.iter().map(|i| effects.group_key(i)).collect();
        let mut ids = BTreeMap::new();
        for k in &keys {
            let next = ids.len();
            ids.entry(k.clone()).or_insert(next);
        }
        // renumber in sorted key order so layouts are deterministic
        let sorted: BTreeMap<String, usize> = ids.keys().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        (keys.iter().map(|k| sorted[k]).collect(), sorted.len())
    }

    fn group_names(&self, effects: Effects) -> Vec<String> {
        let set: std::collections::BTreeSet<String> = self.index.iter().map(|i| effects.group_key(i)).collect();
        set.into_iter().collect()
    }

    /// Regressor matrix with a leading ones column when the design has an
    /// intercept.
    fn full_columns(&self) -> (DMatrix<f64>, Vec<String>) {
        if !self.intercept {
            return (self.regressors.clone(), self.names.clone());
        }
        let n = self.nobs();
        let k = self.ncols();
        let x = DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { self.regressors[(i, j - 1)] });
        (x, self.column_names())
    }
}

/// Variance components and quasi-demeaning factors of a random-effects fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// σ²_u, variance of the unit effect (truncated at 0).
    pub sigma2_u: f64,
    /// σ²_e, idiosyncratic variance.
    pub sigma2_e: f64,
    /// Untruncated between-based estimate of σ²_u.
    pub sigma2_u_raw: f64,
    /// `(group, T_i, θ_i)` per group, in sorted group order.
    pub theta: Vec<(String, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: Estimator,
    pub spec: String,
    pub effects: Effects,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    /// Two-sided, from Student's t with `dof` degrees of freedom.
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    /// `None` when no unit has two consecutive periods or residuals vanish.
    pub durbin_watson: Option<f64>,
    /// Sample standard deviation of the residuals.
    pub residual_sd: f64,
    pub dof: usize,
    pub n_obs: usize,
    pub variance_components: Option<VarianceComponents>,
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.coefficients[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Number of estimated mean parameters (slopes, intercept, dummies).
    pub fn n_mean_parameters(&self) -> usize {
        self.n_obs - self.dof
    }
}

struct LsSolution {
    beta: DVector<f64>,
    inv_gram: DMatrix<f64>,
    residuals: DVector<f64>,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<LsSolution> {
    let qr = PivotedQr::new(x);
    if !qr.is_full_rank() {
        return Err(PanelError::RankDeficient(
            qr.dependent_columns().into_iter().map(|j| names[j].clone()).collect(),
        ));
    }
    let beta = qr.solve(y);
    let residuals = y - x * &beta;
    Ok(LsSolution {
        beta,
        inv_gram: qr.inverse_gram(),
        residuals,
    })
}

fn zero_columns(d: &DesignMatrix) -> Vec<String> {
    (0..d.ncols())
        .filter(|&j| d.regressors.column(j).iter().all(|&v| v == 0.0))
        .map(|j| d.names[j].clone())
        .collect()
}

/// Two-sided p-value of a t statistic.
pub fn t_p_value(t: f64, dof: usize) -> f64 {
    if t.is_nan() || dof == 0 {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("valid t distribution");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

fn r_squared_centered(y: &DVector<f64>, resid: &DVector<f64>) -> f64 {
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr = resid.norm_squared();
    if sst <= 0.0 {
        return 0.0;
    }
    (1.0 - ssr / sst).clamp(0.0, 1.0)
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    estimator: Estimator,
    d: &DesignMatrix,
    names: Vec<String>,
    coefficients: Vec<f64>,
    covariance: DMatrix<f64>,
    r_squared: f64,
    residuals: Vec<f64>,
    dof: usize,
    variance_components: Option<VarianceComponents>,
) -> FitResult {
    let covariance = symmetrize(&covariance);
    let std_errors: Vec<f64> = (0..coefficients.len()).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    let t_stats: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = t_stats.iter().map(|&t| t_p_value(t, dof)).collect();
    let runs = residual_runs(d.index(), &residuals);
    FitResult {
        estimator,
        spec: d.label.clone(),
        effects: d.effects,
        names,
        coefficients,
        covariance,
        std_errors,
        t_stats,
        p_values,
        r_squared,
        durbin_watson: durbin_watson(&runs).ok(),
        residual_sd: sample_sd(&residuals),
        dof,
        n_obs: d.nobs(),
        variance_components,
        residuals,
    }
}

/// Pooled OLS, with an intercept when the design has one. Effects are ignored.
pub fn ols_fit(d: &DesignMatrix) -> Result<FitResult> {
    let zeros = zero_columns(d);
    if !zeros.is_empty() {
        return Err(PanelError::RankDeficient(zeros));
    }
    let (x, names) = d.full_columns();
    let sol = least_squares(&x, &d.response, &names)?;
    let dof = d.nobs() - x.ncols();
    let s2 = sol.residuals.norm_squared() / dof as f64;
    Ok(assemble(
        Estimator::Pooled,
        d,
        names,
        sol.beta.iter().copied().collect(),
        sol.inv_gram * s2,
        r_squared_centered(&d.response, &sol.residuals),
        sol.residuals.iter().copied().collect(),
        dof,
        None,
    ))
}

fn check_within_variation(d: &DesignMatrix, effects: Effects) -> Result<()> {
    let (gid, g) = d.groups(effects);
    for j in 0..d.ncols() {
        let col = d.regressors.column(j);
        let mut sums = vec![0.0; g];
        let mut counts = vec![0usize; g];
        for (i, &v) in col.iter().enumerate() {
            sums[gid[i]] += v;
            counts[gid[i]] += 1;
        }
        let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let within = col
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - sums[gid[i]] / counts[gid[i]] as f64).abs())
            .fold(0.0_f64, f64::max);
        if within <= 1e-12 * scale {
            return Err(PanelError::AllWithinVariationZero(d.names[j].clone()));
        }
    }
    Ok(())
}

/// Least squares with one dummy per group of the design's effects.
///
/// The dummy coefficients are estimated explicitly (no demeaning); only the
/// slopes are reported. With `Effects::None` this is pooled OLS relabelled.
pub fn lsdv_fit(d: &DesignMatrix) -> Result<FitResult> {
    if d.effects == Effects::None {
        let mut f = ols_fit(d)?;
        f.estimator = Estimator::Lsdv;
        return Ok(f);
    }
    let zeros = zero_columns(d);
    if !zeros.is_empty() {
        return Err(PanelError::RankDeficient(zeros));
    }
    let (gid, g) = d.groups(d.effects);
    let mut counts = vec![0usize; g];
    gid.iter().for_each(|&i| counts[i] += 1);
    if counts.iter().all(|&c| c < 2) {
        return Err(PanelError::InsufficientData("no group has two observations".into()));
    }
    check_within_variation(d, d.effects)?;

    let n = d.nobs();
    let k = d.ncols();
    let x = DMatrix::from_fn(n, k + g, |i, j| {
        if j < k {
            d.regressors[(i, j)]
        } else if gid[i] == j - k {
            1.0
        } else {
            0.0
        }
    });
    let mut names = d.names.clone();
    names.extend(d.group_names(d.effects).into_iter().map(|gname| format!("dummy[{gname}]")));
    let sol = least_squares(&x, &d.response, &names)?;
    let dof = n - k - g;
    let s2 = sol.residuals.norm_squared() / dof as f64;
    let cov = sol.inv_gram.view((0, 0), (k, k)) * s2;
    Ok(assemble(
        Estimator::Lsdv,
        d,
        d.names.clone(),
        sol.beta.rows(0, k).iter().copied().collect(),
        cov,
        r_squared_centered(&d.response, &sol.residuals),
        sol.residuals.iter().copied().collect(),
        dof,
        None,
    ))
}

/// Group-mean deviations of the response and regressors.
fn demean(d: &DesignMatrix, effects: Effects) -> (DVector<f64>, DMatrix<f64>) {
    let (gid, g) = d.groups(effects);
    let n = d.nobs();
    let k = d.ncols();
    let mut counts = vec![0.0; g];
    let mut ysum = vec![0.0; g];
    let mut xsum = DMatrix::<f64>::zeros(g, k);
    for i in 0..n {
        counts[gid[i]] += 1.0;
        ysum[gid[i]] += d.response[i];
        for j in 0..k {
            xsum[(gid[i], j)] += d.regressors[(i, j)];
        }
    }
    let y = DVector::from_fn(n, |i, _| d.response[i] - ysum[gid[i]] / counts[gid[i]]);
    let x = DMatrix::from_fn(n, k, |i, j| d.regressors[(i, j)] - xsum[(gid[i], j)] / counts[gid[i]]);
    (y, x)
}

/// Slopes from OLS on group-demeaned data (the within transformation).
///
/// Algebraically identical to the LSDV slopes; computed by a separate route
/// and used to cross-check [`lsdv_fit`].
pub fn within_slopes(d: &DesignMatrix) -> Result<Vec<f64>> {
    let effects = if d.effects == Effects::None { Effects::Unit } else { d.effects };
    check_within_variation(d, effects)?;
    let (y, x) = demean(d, effects);
    let sol = least_squares(&x, &y, &d.names)?;
    Ok(sol.beta.iter().copied().collect())
}

/// `θ = 1 − sqrt(σ²_e / (T σ²_u + σ²_e))`.
pub fn re_theta(sigma2_u: f64, sigma2_e: f64, periods: usize) -> f64 {
    let denom = periods as f64 * sigma2_u + sigma2_e;
    if denom <= 0.0 {
        return 0.0;
    }
    1.0 - (sigma2_e / denom).sqrt()
}

/// Random-effects GLS via quasi-demeaning.
///
/// σ²_e comes from the within regression, σ²_u from the between regression
/// on group means less σ²_e over the harmonic-mean group size; a negative
/// σ²_u is truncated to 0, which collapses the estimator to pooled OLS.
/// The coefficient covariance is σ²_e (X*ᵀX*)⁻¹ on the quasi-demeaned design.
/// Groups follow the design's effects (unit when the design has none).
pub fn random_effects_fit(d: &DesignMatrix) -> Result<FitResult> {
    let effects = if d.effects == Effects::None { Effects::Unit } else { d.effects };
    let zeros = zero_columns(d);
    if !zeros.is_empty() {
        return Err(PanelError::RankDeficient(zeros));
    }
    let (gid, g) = d.groups(effects);
    if g < 2 {
        return Err(PanelError::InsufficientData("random effects need at least 2 groups".into()));
    }
    let n = d.nobs();
    let k = d.ncols();
    let c = usize::from(d.intercept);

    let mut counts = vec![0usize; g];
    gid.iter().for_each(|&i| counts[i] += 1);

    // within: σ²_e
    check_within_variation(d, effects)?;
    let (yw, xw) = demean(d, effects);
    let within = least_squares(&xw, &yw, &d.names)?;
    let dof_w = n.checked_sub(g + k).filter(|&v| v > 0).ok_or_else(|| {
        PanelError::InsufficientData("no degrees of freedom left for the within regression".into())
    })?;
    let sigma2_e = within.residuals.norm_squared() / dof_w as f64;

    // between: regression on group means
    let mut ybar = DVector::<f64>::zeros(g);
    let mut xbar = DMatrix::<f64>::zeros(g, k);
    for i in 0..n {
        ybar[gid[i]] += d.response[i];
        for j in 0..k {
            xbar[(gid[i], j)] += d.regressors[(i, j)];
        }
    }
    for gi in 0..g {
        let t = counts[gi] as f64;
        ybar[gi] /= t;
        for j in 0..k {
            xbar[(gi, j)] /= t;
        }
    }
    let dof_b = g.checked_sub(k + c).filter(|&v| v > 0).ok_or_else(|| {
        PanelError::InsufficientData(format!("between regression needs more than {} groups", k + c))
    })?;
    let xb = if d.intercept {
        DMatrix::from_fn(g, k + 1, |i, j| if j == 0 { 1.0 } else { xbar[(i, j - 1)] })
    } else {
        xbar.clone()
    };
    let (_, full_names) = d.full_columns();
    let between = least_squares(&xb, &ybar, &full_names)?;
    let sigma2_b = between.residuals.norm_squared() / dof_b as f64;
    let harmonic_t = g as f64 / counts.iter().map(|&t| 1.0 / t as f64).sum::<f64>();
    let sigma2_u_raw = sigma2_b - sigma2_e / harmonic_t;
    let sigma2_u = sigma2_u_raw.max(0.0);

    let theta: Vec<f64> = counts.iter().map(|&t| re_theta(sigma2_u, sigma2_e, t)).collect();

    // quasi-demeaned regression
    let ys = DVector::from_fn(n, |i, _| d.response[i] - theta[gid[i]] * ybar[gid[i]]);
    let xs = DMatrix::from_fn(n, k + c, |i, j| {
        if d.intercept && j == 0 {
            1.0 - theta[gid[i]]
        } else {
            let jj = j - c;
            d.regressors[(i, jj)] - theta[gid[i]] * xbar[(gid[i], jj)]
        }
    });
    let sol = least_squares(&xs, &ys, &full_names)?;
    let dof = n - k - c;

    let (x_full, _) = d.full_columns();
    let fitted = &x_full * &sol.beta;
    let r2 = squared_correlation(&d.response, &fitted);

    let components = VarianceComponents {
        sigma2_u,
        sigma2_e,
        sigma2_u_raw,
        theta: d
            .group_names(effects)
            .into_iter()
            .zip(counts.iter().zip(&theta))
            .map(|(name, (&t, &th))| (name, t, th))
            .collect(),
    };

    Ok(assemble(
        Estimator::RandomEffects,
        d,
        full_names,
        sol.beta.iter().copied().collect(),
        sol.inv_gram * sigma2_e,
        r2,
        sol.residuals.iter().copied().collect(),
        dof,
        Some(components),
    ))
}

fn squared_correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ma = a.mean();
    let mb = b.mean();
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
}

/// Fits one estimator by tag.
pub fn fit(d: &DesignMatrix, estimator: Estimator) -> Result<FitResult> {
    match estimator {
        Estimator::Lsdv => lsdv_fit(d),
        Estimator::RandomEffects => random_effects_fit(d),
        Estimator::Pooled => ols_fit(d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausmanResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// False when the contrast covariance has eigenvalues below
    /// `-1e-10·‖V‖`; the statistic is then the raw quadratic form.
    pub valid: bool,
}

/// Hausman statistic `q' V⁺ q` for a coefficient contrast `q` and contrast
/// covariance `V` (symmetrized first).
///
/// Eigenvalues with magnitude at most `1e-10·‖V‖₂` are treated as zero; the
/// degrees of freedom are the number of remaining eigenvalues. If any of
/// those is negative the result is flagged invalid and the quadratic form is
/// reported unclamped.
pub fn hausman_statistic(q: &DVector<f64>, v: &DMatrix<f64>) -> HausmanResult {
    let v = symmetrize(v);
    let eig = SymmetricEigen::new(v);
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let tol = 1e-10 * norm;
    let proj = eig.eigenvectors.transpose() * q;
    let mut statistic = 0.0;
    let mut dof = 0;
    let mut valid = true;
    for (l, p) in eig.eigenvalues.iter().zip(proj.iter()) {
        if l.abs() <= tol {
            continue;
        }
        if *l < 0.0 {
            valid = false;
        }
        dof += 1;
        statistic += p * p / l;
    }
    let p_value = if dof == 0 || statistic <= 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(dof as f64).expect("positive dof");
        chi.sf(statistic).clamp(0.0, 1.0)
    };
    HausmanResult {
        statistic,
        dof,
        p_value,
        valid,
    }
}

/// Slope names shared by two fits, excluding the intercept, in `fe` order.
pub fn common_slopes(fe: &FitResult, re: &FitResult) -> Vec<String> {
    fe.names
        .iter()
        .filter(|n| n.as_str() != CONST && re.position(n).is_some())
        .cloned()
        .collect()
}

/// Contrast between fixed- and random-effects slopes over `common`.
pub fn hausman_test(fe: &FitResult, re: &FitResult, common: &[String]) -> Result<HausmanResult> {
    let mut fe_pos = Vec::with_capacity(common.len());
    let mut re_pos = Vec::with_capacity(common.len());
    for name in common {
        fe_pos.push(fe.position(name).ok_or_else(|| PanelError::NameMismatch(name.clone()))?);
        re_pos.push(re.position(name).ok_or_else(|| PanelError::NameMismatch(name.clone()))?);
    }
    let m = common.len();
    let q = DVector::from_fn(m, |i, _| fe.coefficients[fe_pos[i]] - re.coefficients[re_pos[i]]);
    let v = DMatrix::from_fn(m, m, |i, j| {
        fe.covariance[(fe_pos[i], fe_pos[j])] - re.covariance[(re_pos[i], re_pos[j])]
    });
    Ok(hausman_statistic(&q, &v))
}

/// Panel Durbin–Watson over runs of consecutive residuals.
///
/// Differences are taken only inside each run; the denominator sums the
/// squares of every residual in every run.
pub fn durbin_watson(runs: &[Vec<f64>]) -> Result<f64> {
    if !runs.iter().any(|r| r.len() >= 2) {
        return Err(PanelError::NoConsecutivePairs);
    }
    let num: f64 = runs
        .iter()
        .flat_map(|r| r.windows(2).map(|w| (w[1] - w[0]).powi(2)))
        .sum();
    let den: f64 = runs.iter().flatten().map(|e| e * e).sum();
    if den == 0.0 {
        return Err(PanelError::ZeroResiduals);
    }
    Ok(num / den)
}

/// Splits residuals into per-unit runs of consecutive periods, ordered by
/// unit then period. A gap in years starts a new run.
pub fn residual_runs(index: &[PanelIndex], residuals: &[f64]) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| index[a].cmp(&index[b]));
    let mut runs: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<&PanelIndex> = None;
    for i in order {
        let cur = &index[i];
        let continues = prev.is_some_and(|p| p.unit() == cur.unit() && cur.period == p.period + 1);
        if continues {
            runs.last_mut().expect("run exists").push(residuals[i]);
        } else {
            runs.push(vec![residuals[i]]);
        }
        prev = Some(cur);
    }
    runs
}

/// `"*"` below 5%, `"**"` below 10%, empty otherwise.
pub fn significance_marker(p: f64, alpha: (f64, f64)) -> &'static str {
    if p < alpha.0 {
        "*"
    } else if p < alpha.1 {
        "**"
    } else {
        ""
    }
}

/// Significance marker per coefficient, in the fit's order.
pub fn summarize_fit(f: &FitResult, alpha: (f64, f64)) -> Vec<(String, &'static str)> {
    f.names
        .iter()
        .zip(&f.p_values)
        .map(|(n, &p)| (n.clone(), significance_marker(p, alpha)))
        .collect()
}
