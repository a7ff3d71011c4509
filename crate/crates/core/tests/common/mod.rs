#![allow(dead_code)]

use std::path::PathBuf;

use negpanel::datagen::{load_csv, SCHEMA_VERSION};
use negpanel::rng::XorShift64Star;
use negpanel::{DesignMatrix, Effects, PanelDataset, PanelIndex};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn panel_302() -> PanelDataset {
    load_csv(fixture("panel_302.csv"), SCHEMA_VERSION).unwrap().dataset
}

pub struct OracleRow {
    pub endogenous: bool,
    pub region: String,
    pub wage: f64,
    pub price_index: f64,
    pub real_wage: f64,
}

pub fn oracle_rows() -> Vec<OracleRow> {
    std::fs::read_to_string(fixture("three_region.oracle"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            OracleRow {
                endogenous: f[0] == "endogenous",
                region: f[1].into(),
                wage: f[2].parse().unwrap(),
                price_index: f[3].parse().unwrap(),
                real_wage: f[4].parse().unwrap(),
            }
        })
        .collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Unbalanced panel `y = Xβ + α_unit + ε` with `units` region×industry
/// units over `periods` years; each cell is dropped with probability
/// `drop_rate` but every unit keeps at least two periods.
pub struct PanelSpec {
    pub units: usize,
    pub periods: usize,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub effect_sd: f64,
    /// Loading of the unit effect on the unit's mean of the first regressor.
    pub effect_loading: f64,
    pub noise_sd: f64,
    pub drop_rate: f64,
}

impl Default for PanelSpec {
    fn default() -> Self {
        Self {
            units: 20,
            periods: 8,
            beta: vec![0.7, -0.3],
            intercept: 0.5,
            effect_sd: 1.0,
            effect_loading: 0.0,
            noise_sd: 0.1,
            drop_rate: 0.0,
        }
    }
}

pub fn random_design(spec: &PanelSpec, seed: u64) -> DesignMatrix {
    let mut rng = XorShift64Star::new(seed);
    let k = spec.beta.len();
    let mut cols = vec![Vec::new(); k];
    let mut y = Vec::new();
    let mut index = Vec::new();
    for u in 0..spec.units {
        let keep: Vec<bool> = loop {
            let keep: Vec<bool> = (0..spec.periods).map(|_| rng.uniform() >= spec.drop_rate).collect();
            if keep.iter().filter(|&&b| b).count() >= 2 {
                break keep;
            }
        };
        let unit_shift: Vec<f64> = (0..k).map(|_| rng.normal(0.0, 1.0)).collect();
        let alpha = spec.effect_sd * rng.standard_normal() + spec.effect_loading * unit_shift[0];
        for (t, kept) in keep.into_iter().enumerate() {
            let x: Vec<f64> = (0..k).map(|j| unit_shift[j] + rng.standard_normal()).collect();
            let e = spec.noise_sd * rng.standard_normal();
            if !kept {
                continue;
            }
            let mut v = spec.intercept + alpha + e;
            for j in 0..k {
                v += spec.beta[j] * x[j];
                cols[j].push(x[j]);
            }
            y.push(v);
            index.push(PanelIndex::new(format!("R{}", u % 5), format!("M{u}"), 1990 + t as i32));
        }
    }
    let names = (1..=k).map(|j| format!("x{j}")).collect();
    DesignMatrix::new(y, cols, names, index, Effects::Unit, true).unwrap()
}
