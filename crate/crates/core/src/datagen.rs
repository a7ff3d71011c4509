//! Panel datasets: CSV ingestion, validation and synthetic generation.
//!
//! One CSV row is one (region, industry, year) cell. A missing cell is an
//! absent row, or a row whose measurement fields are all blank; both are
//! skipped, the latter reported in [`LoadReport::rejected`]. National
//! aggregates are never ingested, see [`crate::specs::aggregate_national`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{Effects, PanelIndex};
use crate::rng::XorShift64Star;
use crate::specs::{self, BuildOptions, SpecError, SpecName};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported schema version {0} (supported: {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("schema mismatch: missing columns [{}], unexpected columns [{}]", missing.join(", "), extra.join(", "))]
    SchemaMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("parse error at line {row}, column '{column}': {message}")]
    ParseError { row: u64, column: String, message: String },
    #[error("duplicate cell ({region}, {industry}, {year})")]
    DuplicateKey { region: String, industry: String, year: i32 },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("coefficient names {got:?} do not match spec columns {expected:?}")]
    BadCoefficientNames { expected: Vec<String>, got: Vec<String> },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub const SCHEMA_VERSION: u32 = 1;

/// CSV columns, in canonical order.
pub const COLUMNS: [&str; 13] = [
    "region",
    "industry",
    "year",
    "real_wage",
    "gva_regional",
    "price_index_regional",
    "employees_regional",
    "employees_all_activities_regional",
    "nominal_wage_regional",
    "flow_to_nation",
    "flow_from_nation",
    "flow_to_leader",
    "region_area_km2",
];

const MEASURES: usize = 10;

/// National series for an observation's (industry, year) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NationalAggregates {
    /// Sum of regional GVA in the industry (Y_pt, Y_nt).
    pub gva_national: f64,
    /// Employment-weighted mean of regional price indices (G_pt).
    pub price_index_national: f64,
    /// Sum of regional employment in the industry (λ_pt).
    pub employees_national: f64,
    /// Manufacturing employment over all regions and industries (L_nt).
    pub employees_manufacturing_national: f64,
    /// Employment-weighted mean nominal wage in the industry (w_pt).
    pub nominal_wage_national: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub region: String,
    pub industry: String,
    pub year: i32,
    pub real_wage: f64,
    pub gva_regional: f64,
    pub price_index_regional: f64,
    pub employees_regional: f64,
    pub employees_all_activities_regional: f64,
    pub nominal_wage_regional: f64,
    pub flow_to_nation: f64,
    pub flow_from_nation: f64,
    pub flow_to_leader: f64,
    pub region_area_km2: f64,
    #[serde(skip)]
    pub national: Option<NationalAggregates>,
}

impl PanelObservation {
    /// Regional productivity: GVA per employee.
    pub fn productivity(&self) -> f64 {
        self.gva_regional / self.employees_regional
    }

    pub fn index(&self) -> PanelIndex {
        PanelIndex::new(self.region.clone(), self.industry.clone(), self.year)
    }

    fn measures(&self) -> [(&'static str, f64); MEASURES] {
        [
            ("real_wage", self.real_wage),
            ("gva_regional", self.gva_regional),
            ("price_index_regional", self.price_index_regional),
            ("employees_regional", self.employees_regional),
            ("employees_all_activities_regional", self.employees_all_activities_regional),
            ("nominal_wage_regional", self.nominal_wage_regional),
            ("flow_to_nation", self.flow_to_nation),
            ("flow_from_nation", self.flow_from_nation),
            ("flow_to_leader", self.flow_to_leader),
            ("region_area_km2", self.region_area_km2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub area_km2: f64,
}

/// Validated panel, observations in canonical order (region registry order,
/// then industry registry order, then year).
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    observations: Vec<PanelObservation>,
    regions: Vec<Region>,
    industries: Vec<String>,
    years: (i32, i32),
}

impl PanelDataset {
    /// Registries are taken in order of first appearance.
    pub fn new(observations: Vec<PanelObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(DataError::InvalidDataset("no observations".into()));
        }
        let mut regions: Vec<Region> = Vec::new();
        let mut industries: Vec<String> = Vec::new();
        let mut keys = HashSet::new();
        for o in &observations {
            if !keys.insert((o.region.as_str(), o.industry.as_str(), o.year)) {
                return Err(DataError::DuplicateKey {
                    region: o.region.clone(),
                    industry: o.industry.clone(),
                    year: o.year,
                });
            }
            match regions.iter().find(|r| r.id == o.region) {
                Some(r) if r.area_km2 != o.region_area_km2 => {
                    return Err(DataError::InvalidDataset(format!(
                        "region '{}' has inconsistent area ({} vs {})",
                        o.region, r.area_km2, o.region_area_km2
                    )));
                }
                Some(_) => {}
                None => regions.push(Region {
                    id: o.region.clone(),
                    area_km2: o.region_area_km2,
                }),
            }
            if !industries.contains(&o.industry) {
                industries.push(o.industry.clone());
            }
        }
        let first = observations.iter().map(|o| o.year).min().expect("non-empty");
        let last = observations.iter().map(|o| o.year).max().expect("non-empty");
        if last - first < 1 {
            return Err(DataError::InvalidDataset("year range must cover at least 2 years".into()));
        }
        let rpos: HashMap<&str, usize> = regions.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        let ipos: HashMap<&str, usize> = industries.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut observations = observations;
        observations.sort_by_key(|o| (rpos[o.region.as_str()], ipos[o.industry.as_str()], o.year));
        Ok(Self {
            observations,
            regions,
            industries,
            years: (first, last),
        })
    }

    pub fn observations(&self) -> &[PanelObservation] {
        &self.observations
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn industries(&self) -> &[String] {
        &self.industries
    }

    /// Inclusive year range.
    pub fn years(&self) -> (i32, i32) {
        self.years
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn has_region(&self, id: &str) -> bool {
        self.regions.iter().any(|r| r.id == id)
    }

    /// Same observations with national aggregates attached.
    pub(crate) fn with_observations(&self, observations: Vec<PanelObservation>) -> Self {
        Self {
            observations,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: PanelDataset,
    /// Data rows read, including rejected ones.
    pub rows_read: usize,
    pub rejected: Vec<RejectedRow>,
}

pub fn load_csv(path: impl AsRef<Path>, schema_version: u32) -> Result<LoadReport> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema_version)
}

/// Parses a dataset from any reader. Lines starting with `#` are comments.
pub fn read_csv<R: Read>(reader: R, schema_version: u32) -> Result<LoadReport> {
    if schema_version != SCHEMA_VERSION {
        return Err(DataError::UnsupportedSchema(schema_version));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let present: Vec<&str> = headers.iter().collect();
    let missing: Vec<String> = COLUMNS.iter().filter(|c| !present.contains(c)).map(|c| c.to_string()).collect();
    let mut seen = HashSet::new();
    let extra: Vec<String> = present
        .iter()
        .filter(|c| !COLUMNS.contains(c) || !seen.insert(**c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(DataError::SchemaMismatch { missing, extra });
    }
    let pos: Vec<usize> = COLUMNS
        .iter()
        .map(|c| present.iter().position(|p| p == c).expect("checked above"))
        .collect();

    let mut observations = Vec::new();
    let mut rejected = Vec::new();
    let mut rows_read = 0;
    let mut keys = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        rows_read += 1;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(pos[i]).unwrap_or("");
        let measures: Vec<&str> = (3..3 + MEASURES).map(field).collect();
        if measures.iter().all(|m| m.is_empty()) {
            rejected.push(RejectedRow {
                line,
                reason: format!("blank cell ({}, {}, {})", field(0), field(1), field(2)),
            });
            continue;
        }
        let text = |i: usize| -> Result<String> {
            let v = field(i);
            if v.is_empty() {
                return Err(DataError::ParseError {
                    row: line,
                    column: COLUMNS[i].into(),
                    message: "empty field".into(),
                });
            }
            Ok(v.to_string())
        };
        let num = |i: usize| -> Result<f64> {
            let v = text(i)?;
            let x: f64 = v.parse().map_err(|_| DataError::ParseError {
                row: line,
                column: COLUMNS[i].into(),
                message: format!("'{v}' is not a number"),
            })?;
            if !x.is_finite() {
                return Err(DataError::ParseError {
                    row: line,
                    column: COLUMNS[i].into(),
                    message: format!("'{v}' is not finite"),
                });
            }
            Ok(x)
        };
        let year_text = text(2)?;
        let year: i32 = year_text.parse().map_err(|_| DataError::ParseError {
            row: line,
            column: "year".into(),
            message: format!("'{year_text}' is not an integer year"),
        })?;
        let obs = PanelObservation {
            region: text(0)?,
            industry: text(1)?,
            year,
            real_wage: num(3)?,
            gva_regional: num(4)?,
            price_index_regional: num(5)?,
            employees_regional: num(6)?,
            employees_all_activities_regional: num(7)?,
            nominal_wage_regional: num(8)?,
            flow_to_nation: num(9)?,
            flow_from_nation: num(10)?,
            flow_to_leader: num(11)?,
            region_area_km2: num(12)?,
            national: None,
        };
        if !keys.insert((obs.region.clone(), obs.industry.clone(), obs.year)) {
            return Err(DataError::DuplicateKey {
                region: obs.region,
                industry: obs.industry,
                year: obs.year,
            });
        }
        observations.push(obs);
    }
    Ok(LoadReport {
        dataset: PanelDataset::new(observations)?,
        rows_read,
        rejected,
    })
}

/// Writes the dataset in the ingestion schema. `comments` are emitted as
/// leading `# ` lines.
pub fn write_csv<W: Write>(data: &PanelDataset, mut out: W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for o in data.observations() {
        let mut rec = vec![o.region.clone(), o.industry.clone(), o.year.to_string()];
        rec.extend(o.measures().iter().map(|(_, v)| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &PanelDataset, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(data, std::io::BufWriter::new(file), comments)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityFinding {
    pub region: String,
    pub industry: String,
    pub year: i32,
    pub column: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub positivity: Vec<PositivityFinding>,
    /// Cells of the region × industry × year grid with no observation.
    pub missing_cells: Vec<(String, String, i32)>,
    /// Cells where industry employment exceeds the all-activities total.
    pub share_violations: Vec<(String, String, i32)>,
    pub n_units: usize,
    pub min_periods: usize,
    pub max_periods: usize,
}

impl ValidationReport {
    pub fn n_findings(&self) -> usize {
        self.positivity.len() + self.missing_cells.len() + self.share_violations.len()
    }

    pub fn is_clean(&self) -> bool {
        self.n_findings() == 0
    }

    pub fn is_balanced(&self) -> bool {
        self.min_periods == self.max_periods && self.missing_cells.is_empty()
    }
}

pub fn validate_panel(data: &PanelDataset) -> ValidationReport {
    let mut positivity = Vec::new();
    let mut share_violations = Vec::new();
    let mut present = HashSet::new();
    let mut periods: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for o in data.observations() {
        for (column, value) in o.measures() {
            if !(value > 0.0) {
                positivity.push(PositivityFinding {
                    region: o.region.clone(),
                    industry: o.industry.clone(),
                    year: o.year,
                    column,
                    value,
                });
            }
        }
        if o.employees_regional > o.employees_all_activities_regional {
            share_violations.push((o.region.clone(), o.industry.clone(), o.year));
        }
        present.insert((o.region.as_str(), o.industry.as_str(), o.year));
        *periods.entry((o.region.as_str(), o.industry.as_str())).or_default() += 1;
    }
    let mut missing_cells = Vec::new();
    let (first, last) = data.years();
    for r in data.regions() {
        for ind in data.industries() {
            for y in first..=last {
                if !present.contains(&(r.id.as_str(), ind.as_str(), y)) {
                    missing_cells.push((r.id.clone(), ind.clone(), y));
                }
            }
        }
    }
    ValidationReport {
        positivity,
        missing_cells,
        share_violations,
        n_units: periods.len(),
        min_periods: periods.values().copied().min().unwrap_or(0),
        max_periods: periods.values().copied().max().unwrap_or(0),
    }
}

/// Default region identifiers and approximate areas (km²).
pub const DEFAULT_REGIONS: [(&str, f64); 5] = [
    ("NORTE", 21_278.0),
    ("CENTRO", 23_668.0),
    ("LVT", 11_931.0),
    ("ALENTEJO", 27_276.0),
    ("ALGARVE", 4_960.0),
];

pub const DEFAULT_LEADER: &str = "LVT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Coefficients keyed by the target spec's column names (including `const`).
    pub true_coefficients: BTreeMap<String, f64>,
    /// Standard deviation of the unit effect.
    pub effect_sd: f64,
    /// Standard deviation of the idiosyncratic noise.
    pub noise_sd: f64,
    /// Correlation-inducing loading of the unit effect on the unit mean of
    /// the first slope regressor (standardized). 0 gives effects independent
    /// of the regressors.
    pub effect_correlation: f64,
    pub missing_rate: f64,
    pub seed: u64,
    pub n_regions: usize,
    pub n_industries: usize,
    pub n_years: usize,
    pub start_year: i32,
    pub leader: String,
}

impl SyntheticConfig {
    /// Config with the given coefficients and defaults elsewhere
    /// (5 × 9 × 8 panel from 1987, no missing cells).
    pub fn new(true_coefficients: BTreeMap<String, f64>) -> Self {
        Self {
            true_coefficients,
            effect_sd: 1.0,
            noise_sd: 0.1,
            effect_correlation: 0.0,
            missing_rate: 0.0,
            seed: 1,
            n_regions: 5,
            n_industries: 9,
            n_years: 8,
            start_year: 1987,
            leader: DEFAULT_LEADER.into(),
        }
    }

    /// Coefficients for `spec` from a list of values in column order.
    pub fn for_spec(spec: SpecName, values: &[f64]) -> Self {
        let names = spec.column_names();
        assert_eq!(names.len(), values.len(), "one value per spec column");
        Self::new(names.into_iter().zip(values.iter().copied()).collect())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.into()));
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be positive");
        }
        if !(self.effect_sd >= 0.0 && self.effect_sd.is_finite()) {
            return bad("effect_sd must be non-negative");
        }
        if !self.effect_correlation.is_finite() {
            return bad("effect_correlation must be finite");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)");
        }
        if self.n_regions < 2 || self.n_industries < 1 || self.n_years < 2 {
            return bad("need at least 2 regions, 1 industry and 2 years");
        }
        Ok(())
    }

    pub fn region_ids(&self) -> Vec<(String, f64)> {
        (0..self.n_regions)
            .map(|i| match DEFAULT_REGIONS.get(i) {
                Some((id, area)) => (id.to_string(), *area),
                None => (format!("R{}", i + 1), 10_000.0),
            })
            .collect()
    }

    pub fn industry_ids(&self) -> Vec<String> {
        (1..=self.n_industries).map(|i| format!("M{i}")).collect()
    }
}

/// Everything needed to score a recovery run against the generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: String,
    /// In spec column order.
    pub coefficients: Vec<(String, f64)>,
    pub unit_effects: Vec<(String, f64)>,
    pub config: SyntheticConfig,
    pub n_obs: usize,
}

/// Generates a panel whose log response follows `spec` exactly, plus a unit
/// effect and noise.
///
/// Raw regional series are lognormal draws with enough within-unit
/// variation to identify every slope. Missingness is applied before the
/// regressors are built, so national aggregates and ratios see the same
/// rows the estimators will. For the agglomeration specs the leader
/// region's rows are never dropped and carry their own lognormal real
/// wage; other regions get `ω_r = ω_l · exp(η)`.
///
/// Weighted spec names generate from their unweighted base.
pub fn generate_synthetic(cfg: &SyntheticConfig, spec: SpecName) -> Result<(PanelDataset, TruthRecord)> {
    cfg.validate()?;
    let spec = spec.base();
    let expected = spec.column_names();
    let got: Vec<String> = cfg.true_coefficients.keys().cloned().collect();
    let expected_set: BTreeSet<&String> = expected.iter().collect();
    if got.iter().collect::<BTreeSet<_>>() != expected_set {
        return Err(DataError::BadCoefficientNames { expected, got });
    }
    let regions = cfg.region_ids();
    let agglomeration = spec.is_agglomeration();
    if agglomeration && !regions.iter().any(|(id, _)| *id == cfg.leader) {
        return Err(DataError::InvalidConfig(format!(
            "leader '{}' is not among the generated regions",
            cfg.leader
        )));
    }
    let industries = cfg.industry_ids();
    let years: Vec<i32> = (0..cfg.n_years as i32).map(|t| cfg.start_year + t).collect();
    let mut rng = XorShift64Star::new(cfg.seed);

    // Region- and industry-level scales.
    let region_scale: Vec<f64> = regions.iter().map(|_| rng.uniform_range(0.5, 2.0)).collect();
    let industry_scale: Vec<f64> = industries.iter().map(|_| rng.uniform_range(0.5, 2.0)).collect();

    let mut cells = Vec::with_capacity(regions.len() * industries.len() * years.len());
    for (ri, (rid, area)) in regions.iter().enumerate() {
        for (ii, ind) in industries.iter().enumerate() {
            for (t, &year) in years.iter().enumerate() {
                let trend = 0.02 * t as f64;
                let employees = 1000.0 * region_scale[ri] * industry_scale[ii] * (trend + 0.3 * rng.standard_normal()).exp();
                let productivity = (20f64.ln() + 0.3 * rng.standard_normal()).exp();
                cells.push(PanelObservation {
                    region: rid.clone(),
                    industry: ind.clone(),
                    year,
                    real_wage: 1.0,
                    gva_regional: employees * productivity,
                    price_index_regional: (trend + 0.15 * rng.standard_normal()).exp(),
                    employees_regional: employees,
                    employees_all_activities_regional: 0.0,
                    nominal_wage_regional: (1.5f64.ln() + trend + 0.2 * rng.standard_normal()).exp(),
                    flow_to_nation: (100f64.ln() + 0.4 * rng.standard_normal()).exp(),
                    flow_from_nation: (100f64.ln() + 0.4 * rng.standard_normal()).exp(),
                    flow_to_leader: (50f64.ln() + 0.4 * rng.standard_normal()).exp(),
                    region_area_km2: *area,
                    national: None,
                });
            }
        }
    }
    // All-activities employment per (region, year): manufacturing total times a
    // region-year multiple.
    let mut manufacturing: HashMap<(String, i32), f64> = HashMap::new();
    for c in &cells {
        *manufacturing.entry((c.region.clone(), c.year)).or_default() += c.employees_regional;
    }
    let mut multiple: HashMap<(String, i32), f64> = HashMap::new();
    for (rid, _) in &regions {
        for &y in &years {
            multiple.insert((rid.clone(), y), rng.uniform_range(2.5, 4.0));
        }
    }
    for c in &mut cells {
        let key = (c.region.clone(), c.year);
        c.employees_all_activities_regional = manufacturing[&key] * multiple[&key];
    }

    // Missing cells.
    let keep: Vec<bool> = cells
        .iter()
        .map(|c| {
            let u = rng.uniform();
            (agglomeration && c.region == cfg.leader) || u >= cfg.missing_rate
        })
        .collect();
    let cells: Vec<PanelObservation> = cells.into_iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| c).collect();

    // Unit effects and noise draws, one per grid unit / cell in canonical order.
    let unit_keys: Vec<String> = regions
        .iter()
        .flat_map(|(r, _)| industries.iter().map(move |i| format!("{r}|{i}")))
        .collect();
    let unit_z: HashMap<String, f64> = unit_keys.iter().map(|k| (k.clone(), rng.standard_normal())).collect();
    let noise: Vec<f64> = cells.iter().map(|_| rng.standard_normal()).collect();
    let leader_wage: Vec<f64> = cells.iter().map(|_| (0.2 * rng.standard_normal()).exp()).collect();

    let mut data = PanelDataset::new(cells)?;
    let opts = BuildOptions {
        effects: Effects::Unit,
        leader: cfg.leader.clone(),
        ..BuildOptions::default()
    };
    let built = specs::build(spec, &data, &opts)?;
    let design = built.design;
    let names = design.column_names();
    let beta: Vec<f64> = names.iter().map(|n| cfg.true_coefficients[n]).collect();
    let x = design.regressors();
    let row_of: HashMap<PanelIndex, usize> = design.index().iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();

    // Correlated component: standardized unit mean of the first slope column.
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (i, idx) in design.index().iter().enumerate() {
        let e = sums.entry(format!("{}|{}", idx.region, idx.industry)).or_default();
        e.0 += x[(i, 0)];
        e.1 += 1;
    }
    let means: BTreeMap<String, f64> = sums.iter().map(|(k, (s, n))| (k.clone(), s / *n as f64)).collect();
    let grand = means.values().sum::<f64>() / means.len().max(1) as f64;
    let spread = (means.values().map(|m| (m - grand).powi(2)).sum::<f64>() / means.len().max(1) as f64).sqrt();
    let unit_effect = |key: &str| -> f64 {
        let corr = match (means.get(key), spread > 0.0) {
            (Some(m), true) => cfg.effect_correlation * (m - grand) / spread,
            _ => 0.0,
        };
        cfg.effect_sd * unit_z[key] + corr
    };

    let mut observations = data.observations().to_vec();
    let leader_rows: HashMap<(String, i32), f64> = observations
        .iter()
        .enumerate()
        .filter(|(_, o)| agglomeration && o.region == cfg.leader)
        .map(|(i, o)| ((o.industry.clone(), o.year), leader_wage[i]))
        .collect();
    for (i, o) in observations.iter_mut().enumerate() {
        o.national = None;
        if agglomeration && o.region == cfg.leader {
            o.real_wage = leader_wage[i];
            continue;
        }
        let Some(&row) = row_of.get(&o.index()) else {
            continue;
        };
        let mut eta = cfg.noise_sd * noise[i] + unit_effect(&format!("{}|{}", o.region, o.industry));
        for (j, b) in beta.iter().enumerate() {
            eta += b * if design.intercept() {
                if j == 0 { 1.0 } else { x[(row, j - 1)] }
            } else {
                x[(row, j)]
            };
        }
        o.real_wage = if agglomeration {
            leader_rows[&(o.industry.clone(), o.year)] * eta.exp()
        } else {
            eta.exp()
        };
    }
    data = data.with_observations(observations);

    let truth = TruthRecord {
        spec: spec.as_str().into(),
        coefficients: names.iter().cloned().zip(beta).collect(),
        unit_effects: unit_keys.iter().map(|k| (k.clone(), unit_effect(k))).collect(),
        config: cfg.clone(),
        n_obs: data.len(),
    };
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "region,industry,year,real_wage,gva_regional,price_index_regional,employees_regional,employees_all_activities_regional,nominal_wage_regional,flow_to_nation,flow_from_nation,flow_to_leader,region_area_km2";

    fn row(region: &str, industry: &str, year: i32) -> String {
        format!("{region},{industry},{year},1.2,300,1.01,40,400,1.5,10,12,5,1000")
    }

    #[test]
    fn three_rows_load() {
        let text = format!("{HEADER}\n{}\n{}\n{}\n", row("A", "m1", 1990), row("A", "m1", 1991), row("B", "m1", 1990));
        let rep = read_csv(text.as_bytes(), 1).unwrap();
        assert_eq!(rep.dataset.len(), 3);
        assert_eq!(rep.rows_read, 3);
        assert!(rep.rejected.is_empty());
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = format!("{HEADER}\n{}\n{}\n", row("A", "m1", 1990), row("A", "m1", 1990));
        assert!(matches!(read_csv(text.as_bytes(), 1), Err(DataError::DuplicateKey { year: 1990, .. })));
    }

    #[test]
    fn schema_errors() {
        let text = "region,industry,year,real_wage,bogus\n";
        match read_csv(text.as_bytes(), 1) {
            Err(DataError::SchemaMismatch { missing, extra }) => {
                assert!(missing.contains(&"gva_regional".to_string()));
                assert_eq!(extra, vec!["bogus".to_string()]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_csv(HEADER.as_bytes(), 2), Err(DataError::UnsupportedSchema(2))));
    }

    #[test]
    fn parse_error_names_row_and_column() {
        let bad = row("A", "m1", 1991).replace(",300,", ",abc,");
        let text = format!("{HEADER}\n{}\n{bad}\n", row("A", "m1", 1990));
        match read_csv(text.as_bytes(), 1) {
            Err(DataError::ParseError { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "gva_regional");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn blank_rows_are_reported_not_loaded() {
        let text = format!("{HEADER}\n{}\nA,m1,1991,,,,,,,,,,\n{}\n", row("A", "m1", 1990), row("A", "m1", 1992));
        let rep = read_csv(text.as_bytes(), 1).unwrap();
        assert_eq!(rep.dataset.len(), 2);
        assert_eq!(rep.rows_read, 3);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].line, 3);
    }

    #[test]
    fn validation_findings() {
        let mut rows = Vec::new();
        for r in ["A", "B"] {
            for y in 1990..1993 {
                rows.push(row(r, "m1", y));
            }
        }
        let text = format!("{HEADER}\n{}\n", rows.join("\n"));
        let rep = validate_panel(&read_csv(text.as_bytes(), 1).unwrap().dataset);
        assert!(rep.is_clean());
        assert!(rep.is_balanced());
        assert_eq!((rep.n_units, rep.min_periods, rep.max_periods), (2, 3, 3));

        rows[1] = rows[1].replace(",40,400,", ",0,400,");
        let text = format!("{HEADER}\n{}\n", rows.join("\n"));
        let rep = validate_panel(&read_csv(text.as_bytes(), 1).unwrap().dataset);
        assert_eq!(rep.positivity.len(), 1);
        assert_eq!(rep.positivity[0].column, "employees_regional");
        assert_eq!((rep.positivity[0].region.as_str(), rep.positivity[0].year), ("A", 1991));
    }

    #[test]
    fn inconsistent_area_rejected() {
        let other = row("A", "m2", 1990).replace(",1000", ",999");
        let text = format!("{HEADER}\n{}\n{}\n{other}\n", row("A", "m1", 1990), row("A", "m1", 1991));
        assert!(matches!(read_csv(text.as_bytes(), 1), Err(DataError::InvalidDataset(_))));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig::for_spec(SpecName::Eq4, &[1.5, 0.1, 0.5, -0.6, -0.15, 0.6, -0.4]);
        let (a, ta) = generate_synthetic(&cfg, SpecName::Eq4).unwrap();
        let (b, tb) = generate_synthetic(&cfg, SpecName::Eq4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_csv(&a, &mut x, &[]).unwrap();
        write_csv(&b, &mut y, &[]).unwrap();
        assert_eq!(x, y);
        let (c, _) = generate_synthetic(&SyntheticConfig { seed: 2, ..cfg }, SpecName::Eq4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_bad_names() {
        let cfg = SyntheticConfig::for_spec(SpecName::Eq3, &[0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            generate_synthetic(&cfg, SpecName::Eq4),
            Err(DataError::BadCoefficientNames { .. })
        ));
    }
}
