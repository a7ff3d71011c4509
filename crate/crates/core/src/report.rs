//! Estimation tables and flat CSV export.
//!
//! A table has one block per estimator with three rows per coefficient
//! (estimate with significance marker, t statistic, significance level),
//! R² and DW beside the estimates, and a footer with degrees of freedom,
//! observation counts, residual standard deviations and the Hausman
//! statistic. Display values use 3 decimals; exports keep full precision.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{significance_marker, Estimator, FitResult, HausmanResult, CONST};
use crate::specs::SpecName;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("results come from different specs: '{0}' and '{1}'")]
    SpecMismatch(String, String),
    #[error("no results to render")]
    NoResults,
    #[error("malformed export: {0}")]
    MalformedExport(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub const ALPHA: (f64, f64) = (0.05, 0.10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Text,
    Csv,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(Layout::Text),
            "csv" => Ok(Layout::Csv),
            other => Err(format!("unknown layout '{other}' (text|csv)")),
        }
    }
}

/// Three-decimal display with negative zero folded to zero.
pub fn fmt3(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCell {
    pub coefficient: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub marker: String,
}

impl CoefficientCell {
    /// `"0.937 / (15.239) / (0.000)"`.
    pub fn triplet(&self) -> String {
        format!("{} / ({}) / ({})", fmt3(self.coefficient), fmt3(self.t_stat), fmt3(self.p_value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBlock {
    pub estimator: Estimator,
    /// Aligned with [`EstimationTable::columns`]; `None` where the estimator
    /// has no such coefficient (the intercept under LSDV).
    pub cells: Vec<Option<CoefficientCell>>,
    pub r_squared: f64,
    pub durbin_watson: Option<f64>,
    pub dof: usize,
    pub n_obs: usize,
    pub residual_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationTable {
    pub title: String,
    pub spec: String,
    pub columns: Vec<String>,
    pub blocks: Vec<EstimatorBlock>,
    pub hausman: Option<HausmanResult>,
    pub footnotes: Vec<String>,
    /// Emitted as leading `# ` lines.
    pub provenance: Vec<String>,
}

fn title_for(spec: &str) -> String {
    match spec.parse::<SpecName>() {
        Ok(s) => s.title().to_string(),
        Err(_) => format!("Estimation of {spec}"),
    }
}

fn default_footnotes() -> Vec<String> {
    vec![
        "(*) Coefficient statistically significant at 5%.".into(),
        "(**) Coefficient statistically significant at 10%.".into(),
    ]
}

fn ordered_columns<'a>(names: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for n in names {
        if !cols.contains(n) {
            cols.push(n.clone());
        }
    }
    if let Some(p) = cols.iter().position(|c| c == CONST) {
        let c = cols.remove(p);
        cols.insert(0, c);
    }
    cols
}

impl EstimationTable {
    pub fn from_fits(results: &[FitResult], hausman: Option<&HausmanResult>) -> Result<Self> {
        let first = results.first().ok_or(ReportError::NoResults)?;
        if let Some(other) = results.iter().find(|r| r.spec != first.spec) {
            return Err(ReportError::SpecMismatch(first.spec.clone(), other.spec.clone()));
        }
        let columns = ordered_columns(results.iter().flat_map(|r| r.names.iter()));
        let blocks = results
            .iter()
            .map(|r| EstimatorBlock {
                estimator: r.estimator,
                cells: columns
                    .iter()
                    .map(|c| {
                        r.position(c).map(|i| CoefficientCell {
                            coefficient: r.coefficients[i],
                            t_stat: r.t_stats[i],
                            p_value: r.p_values[i],
                            marker: significance_marker(r.p_values[i], ALPHA).into(),
                        })
                    })
                    .collect(),
                r_squared: r.r_squared,
                durbin_watson: r.durbin_watson,
                dof: r.dof,
                n_obs: r.n_obs,
                residual_sd: r.residual_sd,
            })
            .collect();
        Ok(Self {
            title: title_for(&first.spec),
            spec: first.spec.clone(),
            columns,
            blocks,
            hausman: hausman.cloned(),
            footnotes: default_footnotes(),
            provenance: Vec::new(),
        })
    }

    /// Rebuilds a table from exported rows (full-precision values).
    pub fn from_export(rows: &[ExportRow]) -> Result<Self> {
        let first = rows.first().ok_or(ReportError::NoResults)?;
        if let Some(other) = rows.iter().find(|r| r.spec != first.spec) {
            return Err(ReportError::SpecMismatch(first.spec.clone(), other.spec.clone()));
        }
        let columns = ordered_columns(rows.iter().map(|r| &r.name));
        let mut estimators: Vec<Estimator> = Vec::new();
        for r in rows {
            let e: Estimator = r.estimator.parse().map_err(ReportError::MalformedExport)?;
            if !estimators.contains(&e) {
                estimators.push(e);
            }
        }
        let blocks = estimators
            .iter()
            .map(|&e| {
                let mine: Vec<&ExportRow> = rows.iter().filter(|r| r.estimator == e.as_str()).collect();
                let head = mine[0];
                EstimatorBlock {
                    estimator: e,
                    cells: columns
                        .iter()
                        .map(|c| {
                            mine.iter().find(|r| &r.name == c).map(|r| CoefficientCell {
                                coefficient: r.coefficient,
                                t_stat: r.t_stat,
                                p_value: r.p_value,
                                marker: r.marker.clone(),
                            })
                        })
                        .collect(),
                    r_squared: head.r_squared,
                    durbin_watson: head.durbin_watson,
                    dof: head.dof,
                    n_obs: head.n_obs,
                    residual_sd: head.residual_sd,
                }
            })
            .collect();
        let hausman = match (first.hausman_statistic, first.hausman_dof, first.hausman_p_value, first.hausman_valid) {
            (Some(statistic), Some(dof), Some(p_value), Some(valid)) => Some(HausmanResult {
                statistic,
                dof,
                p_value,
                valid,
            }),
            _ => None,
        };
        Ok(Self {
            title: title_for(&first.spec),
            spec: first.spec.clone(),
            columns,
            blocks,
            hausman,
            footnotes: default_footnotes(),
            provenance: Vec::new(),
        })
    }

    pub fn with_provenance(mut self, lines: Vec<String>) -> Self {
        self.provenance = lines;
        self
    }

    pub fn render(&self, layout: Layout) -> String {
        match layout {
            Layout::Text => self.render_text(),
            Layout::Csv => self.render_csv(),
        }
    }

    fn hausman_display(&self) -> Option<String> {
        self.hausman.as_ref().map(|h| {
            let mut s = fmt3(h.statistic);
            if !h.valid {
                s.push_str(" (invalid contrast)");
            } else {
                s.push_str(significance_marker(h.p_value, ALPHA));
            }
            s
        })
    }

    fn render_text(&self) -> String {
        const LABEL: usize = 24;
        let width = self
            .columns
            .iter()
            .map(|c| c.chars().count() + 2)
            .chain(std::iter::once(12))
            .max()
            .unwrap_or(12);
        let mut s = String::new();
        for p in &self.provenance {
            let _ = writeln!(s, "# {p}");
        }
        let _ = writeln!(s, "{} [{}]", self.title, self.spec);
        let _ = writeln!(s);
        let _ = write!(s, "{:<LABEL$}", "Variable");
        for c in &self.columns {
            let _ = write!(s, "{c:>width$}");
        }
        let _ = writeln!(s, "{:>10}{:>10}", "R²", "DW");

        let row = |s: &mut String, label: &str, cells: Vec<String>, tail: Option<(String, String)>| {
            let _ = write!(s, "{label:<LABEL$}");
            for c in cells {
                let _ = write!(s, "{c:>width$}");
            }
            if let Some((a, b)) = tail {
                let _ = write!(s, "{a:>10}{b:>10}");
            }
            let _ = writeln!(s);
        };
        for b in &self.blocks {
            let _ = writeln!(s, "{}", b.estimator.label());
            let coef = b
                .cells
                .iter()
                .map(|c| c.as_ref().map(|c| format!("{}{}", fmt3(c.coefficient), c.marker)).unwrap_or_default())
                .collect();
            let dw = b.durbin_watson.map(fmt3).unwrap_or_else(|| "-".into());
            row(&mut s, "  Coefficients", coef, Some((fmt3(b.r_squared), dw)));
            let t = b
                .cells
                .iter()
                .map(|c| c.as_ref().map(|c| format!("({})", fmt3(c.t_stat))).unwrap_or_default())
                .collect();
            row(&mut s, "  T-stat.", t, None);
            let p = b
                .cells
                .iter()
                .map(|c| c.as_ref().map(|c| format!("({})", fmt3(c.p_value))).unwrap_or_default())
                .collect();
            row(&mut s, "  L. signif.", p, None);
        }
        let join = |f: &dyn Fn(&EstimatorBlock) -> String| self.blocks.iter().map(f).collect::<Vec<_>>().join(" - ");
        let _ = writeln!(s, "{:<LABEL$}{}", "Degrees of freedom", join(&|b| b.dof.to_string()));
        let _ = writeln!(s, "{:<LABEL$}{}", "Number of observations", join(&|b| b.n_obs.to_string()));
        let _ = writeln!(s, "{:<LABEL$}{}", "Residual SD", join(&|b| fmt3(b.residual_sd)));
        if let Some(h) = self.hausman_display() {
            let _ = writeln!(s, "{:<LABEL$}{}", "T.HAUSMAN", h);
        }
        let _ = writeln!(s);
        for f in &self.footnotes {
            let _ = writeln!(s, "{f}");
        }
        s
    }

    fn render_csv(&self) -> String {
        let mut s = String::new();
        for p in &self.provenance {
            let _ = writeln!(s, "# {p}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut put = |rec: [&str; 5]| w.write_record(rec).expect("in-memory write");
        put(["estimator", "row", "column", "value", "marker"]);
        for b in &self.blocks {
            let e = b.estimator.as_str();
            for (c, cell) in self.columns.iter().zip(&b.cells) {
                if let Some(cell) = cell {
                    put([e, "coefficient", c, &fmt3(cell.coefficient), &cell.marker]);
                    put([e, "t_stat", c, &fmt3(cell.t_stat), ""]);
                    put([e, "p_value", c, &fmt3(cell.p_value), ""]);
                }
            }
            put([e, "r_squared", "", &fmt3(b.r_squared), ""]);
            put([e, "durbin_watson", "", &b.durbin_watson.map(fmt3).unwrap_or_else(|| "-".into()), ""]);
            put([e, "dof", "", &b.dof.to_string(), ""]);
            put([e, "n_obs", "", &b.n_obs.to_string(), ""]);
            put([e, "residual_sd", "", &fmt3(b.residual_sd), ""]);
        }
        if let Some(h) = &self.hausman {
            let marker = if h.valid { significance_marker(h.p_value, ALPHA) } else { "invalid contrast" };
            put(["hausman", "statistic", "", &fmt3(h.statistic), marker]);
        }
        s.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        s
    }
}

/// Renders one or more fits of the same spec.
pub fn render_table(results: &[FitResult], hausman: Option<&HausmanResult>, layout: Layout) -> Result<String> {
    Ok(EstimationTable::from_fits(results, hausman)?.render(layout))
}

/// One exported coefficient; fit-level statistics repeat on every row of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub spec: String,
    pub estimator: String,
    pub name: String,
    pub coefficient: f64,
    pub std_error: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub marker: String,
    pub coefficient_3dp: String,
    pub t_stat_3dp: String,
    pub p_value_3dp: String,
    pub r_squared: f64,
    pub durbin_watson: Option<f64>,
    pub residual_sd: f64,
    pub dof: usize,
    pub n_obs: usize,
    pub hausman_statistic: Option<f64>,
    pub hausman_dof: Option<usize>,
    pub hausman_p_value: Option<f64>,
    pub hausman_valid: Option<bool>,
}

pub fn export_rows(results: &[FitResult], hausman: Option<&HausmanResult>) -> Vec<ExportRow> {
    results
        .iter()
        .flat_map(|r| {
            (0..r.names.len()).map(move |i| ExportRow {
                spec: r.spec.clone(),
                estimator: r.estimator.as_str().into(),
                name: r.names[i].clone(),
                coefficient: r.coefficients[i],
                std_error: r.std_errors[i],
                t_stat: r.t_stats[i],
                p_value: r.p_values[i],
                marker: significance_marker(r.p_values[i], ALPHA).into(),
                coefficient_3dp: fmt3(r.coefficients[i]),
                t_stat_3dp: fmt3(r.t_stats[i]),
                p_value_3dp: fmt3(r.p_values[i]),
                r_squared: r.r_squared,
                durbin_watson: r.durbin_watson,
                residual_sd: r.residual_sd,
                dof: r.dof,
                n_obs: r.n_obs,
                hausman_statistic: hausman.map(|h| h.statistic),
                hausman_dof: hausman.map(|h| h.dof),
                hausman_p_value: hausman.map(|h| h.p_value),
                hausman_valid: hausman.map(|h| h.valid),
            })
        })
        .collect()
}

/// Flat export, one row per (estimator, coefficient), preceded by
/// `provenance` comment lines.
pub fn export_csv(results: &[FitResult], hausman: Option<&HausmanResult>, provenance: &[String]) -> Result<String> {
    let mut s = String::new();
    for p in provenance {
        let _ = writeln!(s, "# {p}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in export_rows(results, hausman) {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::MalformedExport(e.to_string()))?;
    s.push_str(&String::from_utf8(bytes).map_err(|e| ReportError::MalformedExport(e.to_string()))?);
    Ok(s)
}

pub fn import_csv(text: &str) -> Result<Vec<ExportRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(ReportError::from)).collect()
}
