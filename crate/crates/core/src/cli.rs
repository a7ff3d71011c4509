//! Command-line front end: `simulate`, `estimate`, `synth` and `report`.
//!
//! Settings come from an optional flat `key = value` file (`#` starts a
//! comment) and are overridden by flags. Every output starts with a
//! reproducibility header carrying a SHA-256 of the resolved settings and
//! the seed. Exit codes: 0 success, 1 validation error, 2 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::{self, generate_synthetic, load_csv, DataError, PanelDataset, SyntheticConfig, SCHEMA_VERSION};
use crate::neg_core::{solve_equilibrium, NegError, NegParameters, SolverOptions, SpatialEconomy};
use crate::panel::{common_slopes, fit, hausman_test, Effects, Estimator, FitResult, HausmanResult, PanelError};
use crate::report::{export_csv, import_csv, EstimationTable, Layout, ReportError};
use crate::specs::{self, BuildOptions, SpecError, SpecName};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<NegError> for CliError {
    fn from(e: NegError) -> Self {
        match e {
            NegError::NoConvergence { .. } | NegError::NonPositiveWage { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        match e {
            PanelError::RankDeficient(_) | PanelError::AllWithinVariationZero(_) | PanelError::ZeroResiduals => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::Panel(p) => p.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Spec(s) => s.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(format!("I/O error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "negpanel", version, about = "Spatial equilibrium solver and panel estimation of real-wage equations")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Flat key = value settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// eq3, eq3p, eq4, eq5, eq5p, eq3w or eq4w.
    #[arg(long, global = true)]
    pub spec: Option<String>,
    /// Comma-separated list of lsdv, re, pooled.
    #[arg(long, global = true)]
    pub estimators: Option<String>,
    /// unit, region, industry or none.
    #[arg(long, global = true)]
    pub effects: Option<String>,
    #[arg(long, global = true)]
    pub leader: Option<String>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra settings as key=value; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the short-run equilibrium of the economy described in the settings.
    Simulate {
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        endogenous_income: bool,
    },
    /// Fit a spec to a panel CSV (or a synthetic panel when no input is given).
    Estimate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        include_leader: bool,
        /// text or csv.
        #[arg(long)]
        layout: Option<String>,
    },
    /// Write a synthetic panel CSV and a JSON truth sidecar.
    Synth {
        #[arg(long)]
        missing_rate: Option<f64>,
        #[arg(long)]
        effect_sd: Option<f64>,
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Comma-separated values in spec column order (const first).
        #[arg(long)]
        coefficients: Option<String>,
    },
    /// Render a table from an exported estimation CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        layout: Option<String>,
    },
}

/// Resolved settings: file values overridden by flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", i + 1)))?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(CliError::Validation(format!("config line {}: empty key", i + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_map(values: BTreeMap<String, String>) -> Self {
        Self { values }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Ok(Self::from_map(parse_key_values(&text)?))
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.replace('-', "_"), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Validation(format!("setting '{key}' = '{v}': {e}")))
            })
            .transpose()
    }

    fn parsed_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_f64_list(key, v)).transpose()
    }

    /// SHA-256 over the sorted `key=value` lines, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed_or("seed", 1)
    }

    pub fn provenance(&self, command: &str) -> Result<Vec<String>> {
        Ok(vec![format!(
            "negpanel {} {command} config_sha256={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            self.seed()?
        )])
    }

    pub fn params(&self) -> Result<NegParameters> {
        Ok(NegParameters::new(
            self.parsed_or("sigma", NegParameters::DEFAULT_SIGMA)?,
            self.parsed_or("mu", NegParameters::DEFAULT_MU)?,
        )?)
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let d = SolverOptions::default();
        Ok(SolverOptions {
            endogenous_income: self.parsed_or("endogenous_income", d.endogenous_income)?,
            damping: self.parsed_or("damping", d.damping)?,
            tol: self.parsed_or("tol", d.tol)?,
            max_iter: self.parsed_or("max_iter", d.max_iter)?,
        })
    }

    /// Economy from `regions`, `income`, `labor`, `immobile_income` (comma
    /// lists) and `transport` (rows separated by `;`).
    pub fn economy(&self) -> Result<SpatialEconomy> {
        let need = |k: &str| {
            self.get(k)
                .ok_or_else(|| CliError::Validation(format!("missing setting '{k}'")))
        };
        let regions: Vec<String> = need("regions")?.split(',').map(|s| s.trim().to_string()).collect();
        let n = regions.len();
        let income = parse_f64_list("income", need("income")?)?;
        let labor = parse_f64_list("labor", need("labor")?)?;
        let immobile = match self.list_f64("immobile_income")? {
            Some(v) => v,
            None => vec![0.0; n],
        };
        let rows: Vec<Vec<f64>> = need("transport")?
            .split(';')
            .map(|r| parse_f64_list("transport", r))
            .collect::<Result<_>>()?;
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(CliError::Validation(format!("transport must be {n} x {n}")));
        }
        let t = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(SpatialEconomy::new(regions, income, labor, immobile, t, self.params()?)?)
    }

    pub fn spec(&self) -> Result<SpecName> {
        self.get("spec").unwrap_or("eq3").parse::<SpecName>().map_err(CliError::from)
    }

    pub fn estimators(&self) -> Result<Vec<Estimator>> {
        self.get("estimators")
            .unwrap_or("lsdv,re")
            .split(',')
            .map(|s| s.trim().parse::<Estimator>().map_err(CliError::Validation))
            .collect()
    }

    pub fn build_options(&self) -> Result<BuildOptions> {
        let d = BuildOptions::default();
        let effects = match self.get("effects") {
            Some(e) => e.parse::<Effects>().map_err(CliError::Validation)?,
            None => d.effects,
        };
        Ok(BuildOptions {
            effects,
            leader: self.get("leader").map(str::to_string).unwrap_or(d.leader),
            include_leader: self.parsed_or("include_leader", d.include_leader)?,
            ..d
        })
    }

    pub fn layout(&self) -> Result<Layout> {
        self.get("layout").unwrap_or("text").parse().map_err(CliError::Validation)
    }

    pub fn synthetic_config(&self, spec: SpecName) -> Result<SyntheticConfig> {
        let values = match self.list_f64("coefficients")? {
            Some(v) => v,
            None => default_coefficients(spec),
        };
        let names = spec.base().column_names();
        if values.len() != names.len() {
            return Err(CliError::Validation(format!(
                "{} coefficients given, {} expected ({})",
                values.len(),
                names.len(),
                names.join(", ")
            )));
        }
        let mut cfg = SyntheticConfig::for_spec(spec.base(), &values);
        cfg.seed = self.seed()?;
        cfg.effect_sd = self.parsed_or("effect_sd", cfg.effect_sd)?;
        cfg.noise_sd = self.parsed_or("noise_sd", cfg.noise_sd)?;
        cfg.effect_correlation = self.parsed_or("effect_correlation", cfg.effect_correlation)?;
        cfg.missing_rate = self.parsed_or("missing_rate", cfg.missing_rate)?;
        cfg.n_regions = self.parsed_or("n_regions", cfg.n_regions)?;
        cfg.n_industries = self.parsed_or("n_industries", cfg.n_industries)?;
        cfg.n_years = self.parsed_or("n_years", cfg.n_years)?;
        cfg.start_year = self.parsed_or("start_year", cfg.start_year)?;
        if let Some(l) = self.get("leader") {
            cfg.leader = l.to_string();
        }
        Ok(cfg)
    }
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("setting '{key}': '{}': {e}", s.trim())))
        })
        .collect()
}

/// Generating coefficients used by `synth` when none are given, in spec
/// column order.
pub fn default_coefficients(spec: SpecName) -> Vec<f64> {
    match spec.base() {
        SpecName::Eq3 => vec![0.0, -0.038, 0.674, -0.967, 0.025, 0.937, -0.594],
        SpecName::Eq3p => vec![0.0, -0.259, 0.557, -0.884, 0.256, 0.883, -0.493, 0.258],
        SpecName::Eq4 => vec![1.530, 0.098, 0.559, -0.624, -0.155, 0.619, -0.411],
        SpecName::Eq5 => vec![-3.991, -0.040, 0.012, 0.390, -0.413, -0.507, -0.228, 0.368],
        SpecName::Eq5p => vec![-3.053, -0.240, 0.015, 0.486, 0.218, -0.266, -0.333, -0.141, 0.230],
        _ => unreachable!("base specs only"),
    }
}

fn resolve(common: &CommonArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim());
    }
    macro_rules! flag {
        ($key:literal, $val:expr) => {
            if let Some(v) = &$val {
                cfg.set($key, v.to_string());
            }
        };
    }
    flag!("spec", common.spec);
    flag!("estimators", common.estimators);
    flag!("effects", common.effects);
    flag!("leader", common.leader);
    flag!("sigma", common.sigma);
    flag!("mu", common.mu);
    flag!("seed", common.seed);
    if let Some(o) = &common.out {
        cfg.set("out", o.display());
    }
    match command {
        Command::Simulate {
            damping,
            tol,
            max_iter,
            endogenous_income,
        } => {
            flag!("damping", damping);
            flag!("tol", tol);
            flag!("max_iter", max_iter);
            if *endogenous_income {
                cfg.set("endogenous_income", true);
            }
        }
        Command::Estimate {
            input,
            include_leader,
            layout,
        } => {
            if let Some(i) = input {
                cfg.set("input", i.display());
            }
            if *include_leader {
                cfg.set("include_leader", true);
            }
            flag!("layout", layout);
        }
        Command::Synth {
            missing_rate,
            effect_sd,
            noise_sd,
            coefficients,
        } => {
            flag!("missing_rate", missing_rate);
            flag!("effect_sd", effect_sd);
            flag!("noise_sd", noise_sd);
            flag!("coefficients", coefficients);
        }
        Command::Report { input, layout } => {
            cfg.set("input", input.display());
            flag!("layout", layout);
        }
    }
    Ok(cfg)
}

/// Solves the configured economy and prints the equilibrium.
pub fn cmd_simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let econ = cfg.economy()?;
    let opts = cfg.solver_options()?;
    for line in cfg.provenance("simulate")? {
        writeln!(out, "# {line}")?;
    }
    let state = match solve_equilibrium(&econ, &opts) {
        Ok(s) => s,
        Err(e @ NegError::NoConvergence { residual, iterations }) => {
            writeln!(out, "no convergence after {iterations} iterations")?;
            writeln!(out, "residual: {residual:e}")?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    writeln!(out, "{:<12}{:>22}{:>22}{:>22}", "region", "nominal_wage", "price_index", "real_wage")?;
    for (i, r) in econ.regions().iter().enumerate() {
        writeln!(
            out,
            "{:<12}{:>22.15}{:>22.15}{:>22.15}",
            r, state.nominal_wage[i], state.price_index[i], state.real_wage[i]
        )?;
    }
    writeln!(out, "iterations: {}", state.iterations)?;
    writeln!(out, "residual: {:e}", state.residual)?;
    writeln!(out, "income_scale: {}", state.income_scale)?;
    Ok(())
}

/// Fits every requested estimator; adds a Hausman contrast when both LSDV
/// and random effects are present.
pub fn estimate_all(
    design: &crate::panel::DesignMatrix,
    estimators: &[Estimator],
) -> Result<(Vec<FitResult>, Option<HausmanResult>)> {
    let fits: Vec<FitResult> = estimators.iter().map(|&e| fit(design, e)).collect::<std::result::Result<_, _>>()?;
    let fe = fits.iter().find(|f| f.estimator == Estimator::Lsdv);
    let re = fits.iter().find(|f| f.estimator == Estimator::RandomEffects);
    let hausman = match (fe, re) {
        (Some(fe), Some(re)) => {
            let common = common_slopes(fe, re);
            if common.is_empty() {
                None
            } else {
                Some(hausman_test(fe, re, &common)?)
            }
        }
        _ => None,
    };
    Ok((fits, hausman))
}

fn load_or_generate(cfg: &RunConfig, spec: SpecName) -> Result<(PanelDataset, Vec<String>)> {
    match cfg.get("input") {
        Some(path) => {
            let report = load_csv(path, SCHEMA_VERSION)?;
            let notes = if report.rejected.is_empty() {
                Vec::new()
            } else {
                vec![format!("{} rows rejected on load", report.rejected.len())]
            };
            Ok((report.dataset, notes))
        }
        None => {
            let (data, _) = generate_synthetic(&cfg.synthetic_config(spec)?, spec)?;
            Ok((data, vec!["synthetic input".into()]))
        }
    }
}

/// Builds the configured spec, fits it and prints the table. With `out`
/// set, also writes the full-precision export.
pub fn cmd_estimate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let spec = cfg.spec()?;
    let estimators = cfg.estimators()?;
    let opts = cfg.build_options()?;
    let layout = cfg.layout()?;
    let (data, mut notes) = load_or_generate(cfg, spec)?;
    let built = specs::build(spec, &data, &opts)?;
    if !built.dropped.is_empty() {
        notes.push(format!("{} rows dropped for non-positive log inputs", built.dropped.len()));
    }
    let (fits, hausman) = estimate_all(&built.design, &estimators)?;
    let mut provenance = cfg.provenance("estimate")?;
    provenance.extend(notes);
    let table = EstimationTable::from_fits(&fits, hausman.as_ref())?.with_provenance(provenance.clone());
    out.write_all(table.render(layout).as_bytes())?;
    if let Some(path) = cfg.get("out") {
        std::fs::write(path, export_csv(&fits, hausman.as_ref(), &provenance)?)?;
    }
    Ok(())
}

/// Path of the truth sidecar written next to a synthetic CSV.
pub fn truth_path(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".truth.json");
    PathBuf::from(p)
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let spec = cfg.spec()?;
    let path = PathBuf::from(cfg.get("out").unwrap_or("synthetic.csv"));
    let (data, truth) = generate_synthetic(&cfg.synthetic_config(spec)?, spec)?;
    let provenance = cfg.provenance("synth")?;
    datagen::save_csv(&data, &path, &provenance)?;
    let json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::Validation(e.to_string()))?;
    let tpath = truth_path(&path);
    std::fs::write(&tpath, json + "\n")?;
    writeln!(out, "# {}", provenance.join(" "))?;
    writeln!(out, "wrote {} rows to {}", data.len(), path.display())?;
    writeln!(out, "wrote truth to {}", tpath.display())?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let path = cfg
        .get("input")
        .ok_or_else(|| CliError::Validation("report needs --input".into()))?;
    let text = std::fs::read_to_string(path)?;
    let rows = import_csv(&text)?;
    let table = EstimationTable::from_export(&rows)?;
    out.write_all(table.render(cfg.layout()?).as_bytes())?;
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = resolve(&cli.common, &cli.command).and_then(|cfg| match cli.command {
        Command::Simulate { .. } => cmd_simulate(&cfg, out),
        Command::Estimate { .. } => cmd_estimate(&cfg, out),
        Command::Synth { .. } => cmd_synth(&cfg, out),
        Command::Report { .. } => cmd_report(&cfg, out),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
