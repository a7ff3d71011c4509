//! Regression specifications built from a [`PanelDataset`].
//!
//! | name   | response          | regressors                                                        |
//! |--------|-------------------|-------------------------------------------------------------------|
//! | `eq3`  | ln ω_rt           | lnY_pt lnT_rpt lnG_pt lnλ_pt lnw_pt lnT_prt                       |
//! | `eq3p` | ln ω_rt           | as `eq3`, then lnP_rt                                             |
//! | `eq4`  | ln ω_rt           | lnY_rt lnT_rpt lnG_rt lnλ_rt lnw_rt lnT_prt                       |
//! | `eq5`  | ln(ω_rt / ω_lt)   | lnY_nt lnT_rlt lnL_nt lnRL_rmt lnRL_rgt lnRL_rkt lnRL_rnt         |
//! | `eq5p` | ln(ω_rt / ω_lt)   | lnY_nt lnT_rlt lnL_nt lnP_rt lnRL_rmt lnRL_rgt lnRL_rkt lnRL_rnt  |
//! | `eq3w` | `eq3` rows scaled by the industry's share of regional manufacturing employment |
//! | `eq4w` | `eq4` rows scaled by the region's share of national industry employment        |
//!
//! Every design carries an intercept slot (`const`); LSDV absorbs it.
//! Rows with a non-positive value in any log column are dropped and
//! reported, unless [`NonPositivePolicy::Error`] is selected.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::datagen::{NationalAggregates, PanelDataset, PanelObservation, DEFAULT_LEADER};
use crate::panel::{DesignMatrix, Effects, PanelError, PanelIndex, CONST};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("non-positive {column} = {value} at ({region}, {industry}, {year})")]
    NonPositiveValue {
        region: String,
        industry: String,
        year: i32,
        column: String,
        value: f64,
    },
    #[error("zero denominator for {ratio} at ({region}, {industry}, {year})")]
    ZeroDenominator {
        region: String,
        industry: String,
        year: i32,
        ratio: &'static str,
    },
    #[error("leader region has no observation for ({industry}, {year})")]
    LeaderMissing { industry: String, year: i32 },
    #[error("leader region '{0}' not present in the dataset")]
    UnknownLeader(String),
    #[error("national aggregate undefined for ({industry}, {year})")]
    IncompleteCell { industry: String, year: i32 },
    #[error("no observations left for {0}")]
    EmptySample(String),
    #[error("{got} weights for {expected} observations")]
    WeightMismatch { expected: usize, got: usize },
    #[error("non-positive weight {value} at row {row}")]
    NonPositiveWeight { row: usize, value: f64 },
    #[error("unknown spec '{0}' (eq3|eq3p|eq4|eq5|eq5p|eq3w|eq4w)")]
    UnknownSpec(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

pub type Result<T> = std::result::Result<T, SpecError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpecName {
    Eq3,
    Eq3p,
    Eq4,
    Eq5,
    Eq5p,
    Eq3w,
    Eq4w,
}

impl SpecName {
    pub const ALL: [SpecName; 7] = [
        SpecName::Eq3,
        SpecName::Eq3p,
        SpecName::Eq4,
        SpecName::Eq5,
        SpecName::Eq5p,
        SpecName::Eq3w,
        SpecName::Eq4w,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpecName::Eq3 => "eq3",
            SpecName::Eq3p => "eq3p",
            SpecName::Eq4 => "eq4",
            SpecName::Eq5 => "eq5",
            SpecName::Eq5p => "eq5p",
            SpecName::Eq3w => "eq3w",
            SpecName::Eq4w => "eq4w",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            SpecName::Eq3 => "Real wages with regressors aggregated at national level (without productivity)",
            SpecName::Eq3p => "Real wages with regressors aggregated at national level (with productivity)",
            SpecName::Eq4 => "Real wages with regressors disaggregated at regional level",
            SpecName::Eq5 => "Agglomeration equation without productivity",
            SpecName::Eq5p => "Agglomeration equation with productivity",
            SpecName::Eq3w => "Real wages, national regressors, weighted by industry share of regional employment",
            SpecName::Eq4w => "Real wages, regional regressors, weighted by regional share of national industry employment",
        }
    }

    pub fn response_name(self) -> &'static str {
        if self.is_agglomeration() {
            "ln(ω_rt/ω_lt)"
        } else {
            "lnω_rt"
        }
    }

    /// Unweighted spec a weighted variant is derived from.
    pub fn base(self) -> SpecName {
        match self {
            SpecName::Eq3w => SpecName::Eq3,
            SpecName::Eq4w => SpecName::Eq4,
            s => s,
        }
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, SpecName::Eq3w | SpecName::Eq4w)
    }

    pub fn is_agglomeration(self) -> bool {
        matches!(self, SpecName::Eq5 | SpecName::Eq5p)
    }

    /// Regressor names, in column order, excluding the intercept.
    pub fn regressor_names(self) -> Vec<&'static str> {
        match self.base() {
            SpecName::Eq3 => vec!["lnY_pt", "lnT_rpt", "lnG_pt", "lnλ_pt", "lnw_pt", "lnT_prt"],
            SpecName::Eq3p => vec!["lnY_pt", "lnT_rpt", "lnG_pt", "lnλ_pt", "lnw_pt", "lnT_prt", "lnP_rt"],
            SpecName::Eq4 => vec!["lnY_rt", "lnT_rpt", "lnG_rt", "lnλ_rt", "lnw_rt", "lnT_prt"],
            SpecName::Eq5 => vec!["lnY_nt", "lnT_rlt", "lnL_nt", "lnRL_rmt", "lnRL_rgt", "lnRL_rkt", "lnRL_rnt"],
            SpecName::Eq5p => vec![
                "lnY_nt", "lnT_rlt", "lnL_nt", "lnP_rt", "lnRL_rmt", "lnRL_rgt", "lnRL_rkt", "lnRL_rnt",
            ],
            _ => unreachable!("base() never returns a weighted spec"),
        }
    }

    /// Coefficient slots of the unweighted design: `const`, then regressors.
    pub fn column_names(self) -> Vec<String> {
        std::iter::once(CONST)
            .chain(self.regressor_names())
            .map(String::from)
            .collect()
    }
}

impl fmt::Display for SpecName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpecName {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self> {
        SpecName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SpecError::UnknownSpec(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonPositivePolicy {
    /// Drop the row and record it in [`SpecDesign::dropped`].
    #[default]
    Drop,
    Error,
}

/// How the weighted alternatives apply their weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightingMode {
    /// Response, regressors and intercept all multiplied by the weight.
    #[default]
    Rows,
    /// Regressors only; response and intercept untouched.
    RegressorsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub effects: Effects,
    pub leader: String,
    /// Keep the leader's own rows (response identically 0) in the
    /// agglomeration specs.
    pub include_leader: bool,
    pub policy: NonPositivePolicy,
    pub weighting: WeightingMode,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            effects: Effects::Unit,
            leader: DEFAULT_LEADER.into(),
            include_leader: false,
            policy: NonPositivePolicy::Drop,
            weighting: WeightingMode::Rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRow {
    pub region: String,
    pub industry: String,
    pub year: i32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecDesign {
    pub spec: SpecName,
    pub design: DesignMatrix,
    pub dropped: Vec<DroppedRow>,
}

/// Agglomeration ratios of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSet {
    /// Regional manufacturing employment over the industry's regional employment.
    pub rl_rmt: f64,
    /// Industry's regional employment over regional employment in all activities.
    pub rl_rgt: f64,
    /// Industry's regional employment per km² of the region.
    pub rl_rkt: f64,
    /// Industry's regional employment over its national employment.
    pub rl_rnt: f64,
}

/// Attaches national aggregates to every observation.
///
/// Per (industry, year): GVA and employment are summed over regions; the
/// nominal wage and price index are employment-weighted means. Manufacturing
/// employment is summed over all regions and industries per year.
pub fn aggregate_national(data: &PanelDataset) -> Result<PanelDataset> {
    #[derive(Default)]
    struct Cell {
        gva: f64,
        emp: f64,
        wage: f64,
        price: f64,
    }
    let mut cells: HashMap<(&str, i32), Cell> = HashMap::new();
    let mut manufacturing: HashMap<i32, f64> = HashMap::new();
    for o in data.observations() {
        let c = cells.entry((o.industry.as_str(), o.year)).or_default();
        c.gva += o.gva_regional;
        c.emp += o.employees_regional;
        c.wage += o.employees_regional * o.nominal_wage_regional;
        c.price += o.employees_regional * o.price_index_regional;
        *manufacturing.entry(o.year).or_default() += o.employees_regional;
    }
    let mut out = Vec::with_capacity(data.len());
    for o in data.observations() {
        let c = &cells[&(o.industry.as_str(), o.year)];
        let agg = NationalAggregates {
            gva_national: c.gva,
            price_index_national: c.price / c.emp,
            employees_national: c.emp,
            employees_manufacturing_national: manufacturing[&o.year],
            nominal_wage_national: c.wage / c.emp,
        };
        let ok = c.emp > 0.0
            && [agg.gva_national, agg.price_index_national, agg.nominal_wage_national, agg.employees_manufacturing_national]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(SpecError::IncompleteCell {
                industry: o.industry.clone(),
                year: o.year,
            });
        }
        let mut o = o.clone();
        o.national = Some(agg);
        out.push(o);
    }
    Ok(data.with_observations(out))
}

fn ensure_national(data: &PanelDataset) -> Result<PanelDataset> {
    let with = data.observations().iter().filter(|o| o.national.is_some()).count();
    if with == data.len() {
        Ok(data.clone())
    } else if with == 0 {
        aggregate_national(data)
    } else {
        Err(SpecError::MissingColumn("national aggregates (partially attached)".into()))
    }
}

fn national(o: &PanelObservation) -> Result<NationalAggregates> {
    o.national.ok_or_else(|| SpecError::MissingColumn("national aggregates".into()))
}

/// Regional manufacturing employment per (region, year).
fn manufacturing_totals(data: &PanelDataset) -> HashMap<(String, i32), f64> {
    let mut m = HashMap::new();
    for o in data.observations() {
        *m.entry((o.region.clone(), o.year)).or_insert(0.0) += o.employees_regional;
    }
    m
}

fn ratio_set(o: &PanelObservation, manufacturing: f64, national_industry: f64) -> std::result::Result<RatioSet, &'static str> {
    let emp = o.employees_regional;
    if emp == 0.0 {
        return Err("RL_rmt");
    }
    if o.employees_all_activities_regional == 0.0 {
        return Err("RL_rgt");
    }
    if o.region_area_km2 == 0.0 {
        return Err("RL_rkt");
    }
    if national_industry == 0.0 {
        return Err("RL_rnt");
    }
    Ok(RatioSet {
        rl_rmt: manufacturing / emp,
        rl_rgt: emp / o.employees_all_activities_regional,
        rl_rkt: emp / o.region_area_km2,
        rl_rnt: emp / national_industry,
    })
}

/// The four agglomeration ratios for every observation, in dataset order.
pub fn compute_rl_ratios(data: &PanelDataset) -> Result<Vec<RatioSet>> {
    let data = ensure_national(data)?;
    let totals = manufacturing_totals(&data);
    data.observations()
        .iter()
        .map(|o| {
            let nat = national(o)?;
            ratio_set(o, totals[&(o.region.clone(), o.year)], nat.employees_national).map_err(|ratio| {
                SpecError::ZeroDenominator {
                    region: o.region.clone(),
                    industry: o.industry.clone(),
                    year: o.year,
                    ratio,
                }
            })
        })
        .collect()
}

/// Collects rows, logging each raw value and dropping (or rejecting) rows
/// with non-positive entries.
struct RowCollector<'a> {
    names: Vec<&'static str>,
    opts: &'a BuildOptions,
    response: Vec<f64>,
    columns: Vec<Vec<f64>>,
    index: Vec<PanelIndex>,
    dropped: Vec<DroppedRow>,
}

impl<'a> RowCollector<'a> {
    fn new(names: Vec<&'static str>, opts: &'a BuildOptions) -> Self {
        let k = names.len();
        Self {
            names,
            opts,
            response: Vec::new(),
            columns: vec![Vec::new(); k],
            index: Vec::new(),
            dropped: Vec::new(),
        }
    }

    fn reject(&mut self, o: &PanelObservation, err: SpecError) -> Result<()> {
        match self.opts.policy {
            NonPositivePolicy::Error => Err(err),
            NonPositivePolicy::Drop => {
                self.dropped.push(DroppedRow {
                    region: o.region.clone(),
                    industry: o.industry.clone(),
                    year: o.year,
                    reason: err.to_string(),
                });
                Ok(())
            }
        }
    }

    /// `response` is `(label, numerator, denominator)`; the logged response
    /// is `ln(numerator / denominator)`.
    fn push(&mut self, o: &PanelObservation, response: (&str, f64, f64), raw: &[f64]) -> Result<()> {
        debug_assert_eq!(raw.len(), self.names.len());
        let checks = std::iter::once((response.0, response.1))
            .chain(std::iter::once((response.0, response.2)))
            .chain(self.names.iter().copied().zip(raw.iter().copied()));
        for (column, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                let err = SpecError::NonPositiveValue {
                    region: o.region.clone(),
                    industry: o.industry.clone(),
                    year: o.year,
                    column: column.to_string(),
                    value,
                };
                return self.reject(o, err);
            }
        }
        self.response.push((response.1 / response.2).ln());
        for (col, v) in self.columns.iter_mut().zip(raw) {
            col.push(v.ln());
        }
        self.index.push(o.index());
        Ok(())
    }

    fn finish(self, spec: SpecName) -> Result<SpecDesign> {
        if self.response.is_empty() {
            return Err(SpecError::EmptySample(spec.as_str().into()));
        }
        let design = DesignMatrix::new(
            self.response,
            self.columns,
            self.names.iter().map(|s| s.to_string()).collect(),
            self.index,
            self.opts.effects,
            true,
        )?
        .with_label(spec.as_str())
        .with_response_name(spec.response_name());
        Ok(SpecDesign {
            spec,
            design,
            dropped: self.dropped,
        })
    }
}

/// National-aggregate wage equation, optionally with regional productivity.
pub fn build_eq3(data: &PanelDataset, with_productivity: bool, opts: &BuildOptions) -> Result<SpecDesign> {
    let spec = if with_productivity { SpecName::Eq3p } else { SpecName::Eq3 };
    let data = ensure_national(data)?;
    let mut rows = RowCollector::new(spec.regressor_names(), opts);
    for o in data.observations() {
        let n = national(o)?;
        let mut raw = vec![
            n.gva_national,
            o.flow_to_nation,
            n.price_index_national,
            n.employees_national,
            n.nominal_wage_national,
            o.flow_from_nation,
        ];
        if with_productivity {
            raw.push(o.productivity());
        }
        rows.push(o, ("real_wage", o.real_wage, 1.0), &raw)?;
    }
    rows.finish(spec)
}

/// Regional wage equation.
pub fn build_eq4(data: &PanelDataset, opts: &BuildOptions) -> Result<SpecDesign> {
    let spec = SpecName::Eq4;
    let mut rows = RowCollector::new(spec.regressor_names(), opts);
    for o in data.observations() {
        let raw = [
            o.gva_regional,
            o.flow_to_nation,
            o.price_index_regional,
            o.employees_regional,
            o.nominal_wage_regional,
            o.flow_from_nation,
        ];
        rows.push(o, ("real_wage", o.real_wage, 1.0), &raw)?;
    }
    rows.finish(spec)
}

/// Agglomeration equation: log real wage relative to the leader region in
/// the same industry and year.
pub fn build_eq5(data: &PanelDataset, with_productivity: bool, opts: &BuildOptions) -> Result<SpecDesign> {
    let spec = if with_productivity { SpecName::Eq5p } else { SpecName::Eq5 };
    if !data.has_region(&opts.leader) {
        return Err(SpecError::UnknownLeader(opts.leader.clone()));
    }
    let data = ensure_national(data)?;
    let totals = manufacturing_totals(&data);
    let leader: HashMap<(&str, i32), f64> = data
        .observations()
        .iter()
        .filter(|o| o.region == opts.leader)
        .map(|o| ((o.industry.as_str(), o.year), o.real_wage))
        .collect();
    let mut rows = RowCollector::new(spec.regressor_names(), opts);
    for o in data.observations() {
        let is_leader = o.region == opts.leader;
        if is_leader && !opts.include_leader {
            continue;
        }
        let Some(&leader_wage) = leader.get(&(o.industry.as_str(), o.year)) else {
            rows.reject(
                o,
                SpecError::LeaderMissing {
                    industry: o.industry.clone(),
                    year: o.year,
                },
            )?;
            continue;
        };
        let n = national(o)?;
        let ratios = match ratio_set(o, totals[&(o.region.clone(), o.year)], n.employees_national) {
            Ok(r) => r,
            Err(ratio) => {
                rows.reject(
                    o,
                    SpecError::ZeroDenominator {
                        region: o.region.clone(),
                        industry: o.industry.clone(),
                        year: o.year,
                        ratio,
                    },
                )?;
                continue;
            }
        };
        let mut raw = vec![n.gva_national, o.flow_to_leader, n.employees_manufacturing_national];
        if with_productivity {
            raw.push(o.productivity());
        }
        raw.extend([ratios.rl_rmt, ratios.rl_rgt, ratios.rl_rkt, ratios.rl_rnt]);
        // the leader's own ratio is exactly 1
        let response = if is_leader { o.real_wage } else { leader_wage };
        rows.push(o, ("real_wage", o.real_wage, response), &raw)?;
    }
    rows.finish(spec)
}

/// Scales a design by per-observation weights.
///
/// In [`WeightingMode::Rows`] the response and every regressor are
/// multiplied by the weight and the intercept becomes an explicit `const`
/// column holding the weights. All-ones weights return the design unchanged.
pub fn build_weighted_alternative(base: &DesignMatrix, weights: &[f64], mode: WeightingMode) -> Result<DesignMatrix> {
    let n = base.nobs();
    if weights.len() != n {
        return Err(SpecError::WeightMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    if let Some((row, &value)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(SpecError::NonPositiveWeight { row, value });
    }
    if weights.iter().all(|&w| w == 1.0) {
        return Ok(base.clone());
    }
    let x = base.regressors();
    let k = base.ncols();
    let mut columns: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..n).map(|i| x[(i, j)] * weights[i]).collect())
        .collect();
    let mut names = base.names().to_vec();
    let (response, intercept) = match mode {
        WeightingMode::Rows => {
            let y: Vec<f64> = base.response().iter().zip(weights).map(|(y, w)| y * w).collect();
            if base.intercept() {
                columns.insert(0, weights.to_vec());
                names.insert(0, CONST.to_string());
            }
            (y, false)
        }
        WeightingMode::RegressorsOnly => (base.response().iter().copied().collect(), base.intercept()),
    };
    Ok(DesignMatrix::new(response, columns, names, base.index().to_vec(), base.effects(), intercept)?
        .with_label(base.label())
        .with_response_name(base.response_name()))
}

/// Employment-share weights aligned to `index` rows.
///
/// `eq3w`: industry employment over the region's manufacturing employment.
/// `eq4w`: regional industry employment over the industry's national total.
pub fn employment_weights(data: &PanelDataset, spec: SpecName, index: &[PanelIndex]) -> Result<Vec<f64>> {
    let data = ensure_national(data)?;
    let totals = manufacturing_totals(&data);
    let by_key: HashMap<PanelIndex, &PanelObservation> = data.observations().iter().map(|o| (o.index(), o)).collect();
    index
        .iter()
        .map(|idx| {
            let o = by_key
                .get(idx)
                .ok_or_else(|| SpecError::MissingColumn(format!("observation {idx:?}")))?;
            let denom = match spec {
                SpecName::Eq3w => totals[&(o.region.clone(), o.year)],
                SpecName::Eq4w => national(o)?.employees_national,
                other => return Err(SpecError::UnknownSpec(format!("{other} has no weights"))),
            };
            Ok(o.employees_regional / denom)
        })
        .collect()
}

/// Builds any named spec, weighted variants included.
pub fn build(spec: SpecName, data: &PanelDataset, opts: &BuildOptions) -> Result<SpecDesign> {
    let mut out = match spec.base() {
        SpecName::Eq3 => build_eq3(data, false, opts)?,
        SpecName::Eq3p => build_eq3(data, true, opts)?,
        SpecName::Eq4 => build_eq4(data, opts)?,
        SpecName::Eq5 => build_eq5(data, false, opts)?,
        SpecName::Eq5p => build_eq5(data, true, opts)?,
        _ => unreachable!("base() never returns a weighted spec"),
    };
    if spec.is_weighted() {
        let weights = employment_weights(data, spec, out.design.index())?;
        out.design = build_weighted_alternative(&out.design, &weights, opts.weighting)?.with_label(spec.as_str());
        out.spec = spec;
    }
    Ok(out)
}
