//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{oracle_rows, random_design, rel, PanelSpec};
use nalgebra::{DMatrix, DVector};
use negpanel::datagen::generate_synthetic;
use negpanel::neg_core::{log_real_wage, reduced_real_wage, solve_equilibrium, SolverOptions};
use negpanel::panel::{
    common_slopes, durbin_watson, hausman_statistic, hausman_test, lsdv_fit, ols_fit, random_effects_fit, within_slopes,
};
use negpanel::rng::XorShift64Star;
use negpanel::specs::{build, employment_weights, BuildOptions};
use negpanel::{DesignMatrix, Effects, NegParameters, PanelDataset, PanelIndex, SpatialEconomy, SpecName, SyntheticConfig};
use statrs::distribution::{ContinuousCDF, StudentsT};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn economy(names: &[&str], y: &[f64], l: &[f64], phi: &[f64], t: DMatrix<f64>) -> SpatialEconomy {
    SpatialEconomy::new(
        names.iter().map(|s| s.to_string()).collect(),
        y.to_vec(),
        l.to_vec(),
        phi.to_vec(),
        t,
        NegParameters::default(),
    )
    .unwrap()
}

fn equilibrium_correctness() -> Outcome {
    let opts = SolverOptions::default();
    let mut worst_sym = 0.0_f64;
    for t in [1.2, 1.5, 2.0, 3.0] {
        let e = economy(
            &["a", "b"],
            &[0.7, 0.7],
            &[0.5, 0.5],
            &[0.3, 0.3],
            DMatrix::from_row_slice(2, 2, &[1.0, t, t, 1.0]),
        );
        for endogenous in [false, true] {
            let s = solve_equilibrium(&e, &SolverOptions { endogenous_income: endogenous, ..opts }).unwrap();
            worst_sym = worst_sym.max(rel(s.real_wage[1], s.real_wage[0]));
        }
    }
    check(worst_sym <= 1e-8, || format!("symmetric gap {worst_sym:e}"))?;

    let free = economy(&["a", "b", "c"], &[2.0, 0.3, 0.9], &[0.6, 0.1, 0.3], &[0.0; 3], DMatrix::from_element(3, 3, 1.0));
    let s = solve_equilibrium(&free, &opts).unwrap();
    let worst_free = (1..3).map(|r| rel(s.real_wage[r], s.real_wage[0])).fold(0.0, f64::max);
    check(worst_free <= 1e-8, || format!("free-transport gap {worst_free:e}"))?;

    let t = DMatrix::from_row_slice(3, 3, &[1.0, 1.3, 1.6, 1.25, 1.0, 1.4, 1.7, 1.35, 1.0]);
    let e = economy(&["A", "B", "C"], &[1.0, 0.6, 0.4], &[0.5, 0.3, 0.2], &[0.3, 0.4, 0.3], t);
    let mut worst_oracle = 0.0_f64;
    for endogenous in [false, true] {
        let s = solve_equilibrium(&e, &SolverOptions { endogenous_income: endogenous, ..opts }).unwrap();
        for (r, o) in oracle_rows().iter().filter(|o| o.endogenous == endogenous).enumerate() {
            worst_oracle = worst_oracle
                .max(rel(s.nominal_wage[r], o.wage))
                .max(rel(s.price_index[r], o.price_index))
                .max(rel(s.real_wage[r], o.real_wage));
        }
    }
    check(worst_oracle <= 1e-8, || format!("oracle gap {worst_oracle:e}"))?;
    Ok(format!(
        "symmetric {worst_sym:.1e}, free transport {worst_free:.1e}, oracle {worst_oracle:.1e}"
    ))
}

fn log_linear_consistency() -> Outcome {
    let mut rng = XorShift64Star::new(1000);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let sigma = rng.uniform_range(1.1, 20.0);
        let mu = rng.uniform_range(0.0, 1.0);
        let b1 = rng.uniform_range(-6.0, 6.0).exp();
        let b2 = rng.uniform_range(-6.0, 6.0).exp();
        let p = NegParameters::new(sigma, mu).unwrap();
        let reduced = reduced_real_wage(b1, b2, p).unwrap();
        worst = worst.max(rel(log_real_wage(b1, b2, p).unwrap().exp(), reduced));
    }
    check(worst <= 1e-10, || format!("max relative gap {worst:e}"))?;
    Ok(format!("1000 draws, max relative gap {worst:.1e}"))
}

/// The fixture's missingness pattern applied to a fresh synthetic panel.
fn panel_302_pattern(seed: u64) -> PanelDataset {
    let truth = [1.53, 0.098, 0.559, -0.624, -0.155, 0.619, -0.411];
    let mut cfg = SyntheticConfig::for_spec(SpecName::Eq4, &truth);
    cfg.seed = seed;
    cfg.effect_correlation = 1.0;
    let (full, _) = generate_synthetic(&cfg, SpecName::Eq4).unwrap();
    let mut rng = XorShift64Star::new(seed ^ 0x5EED);
    let mut rows = full.observations().to_vec();
    while rows.len() > 302 {
        let i = (rng.uniform() * rows.len() as f64) as usize;
        rows.remove(i);
    }
    PanelDataset::new(rows).unwrap()
}

fn estimator_equivalence() -> Outcome {
    let mut worst = 0.0_f64;
    let mut n_302 = 0;
    for seed in 0..100u64 {
        let d = if seed % 2 == 0 {
            let data = panel_302_pattern(seed);
            n_302 += 1;
            build(SpecName::Eq4, &data, &BuildOptions::default()).unwrap().design
        } else {
            let spec = PanelSpec {
                units: 10 + (seed as usize % 30),
                periods: 4 + (seed as usize % 6),
                drop_rate: 0.3,
                effect_loading: 1.0,
                ..PanelSpec::default()
            };
            random_design(&spec, seed)
        };
        let a = lsdv_fit(&d).unwrap();
        let b = within_slopes(&d).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b) {
            worst = worst.max(rel(*x, *y));
        }
    }
    check(worst <= 1e-8, || format!("max relative gap {worst:e}"))?;
    Ok(format!("100 panels ({n_302} with 302 of 360 cells), max relative gap {worst:.1e}"))
}

fn coefficient_recovery() -> Outcome {
    let truth = [1.53, 0.098, 0.559, -0.624, -0.155, 0.619, -0.411];
    let reps = 200;
    let mut covered = vec![0usize; truth.len() - 1];
    for seed in 0..reps {
        let mut cfg = SyntheticConfig::for_spec(SpecName::Eq4, &truth);
        cfg.seed = 10_000 + seed;
        cfg.effect_sd = 1.0;
        cfg.noise_sd = 0.1;
        let (data, _) = generate_synthetic(&cfg, SpecName::Eq4).unwrap();
        let f = lsdv_fit(&build(SpecName::Eq4, &data, &BuildOptions::default()).unwrap().design).unwrap();
        let q = StudentsT::new(0.0, 1.0, f.dof as f64).unwrap().inverse_cdf(0.975);
        for (i, c) in covered.iter_mut().enumerate() {
            if (f.coefficients[i] - truth[i + 1]).abs() <= q * f.std_errors[i] {
                *c += 1;
            }
        }
    }
    let rates: Vec<f64> = covered.iter().map(|&c| c as f64 / reps as f64).collect();
    let min = rates.iter().copied().fold(1.0, f64::min);
    let shown: Vec<String> = rates.iter().map(|r| format!("{:.3}", r)).collect();
    check(min >= 0.90, || format!("coverage {}", shown.join(", ")))?;
    Ok(format!("95% coverage over {reps} runs: {}", shown.join(", ")))
}

fn hausman_behavior() -> Outcome {
    let scalar = hausman_statistic(&DVector::from_element(1, 0.5), &DMatrix::from_element(1, 1, 0.25));
    check(scalar.statistic == 1.0 && scalar.dof == 1, || format!("scalar case {scalar:?}"))?;

    let truth = [1.53, 0.098, 0.559, -0.624, -0.155, 0.619, -0.411];
    let mut rejections = 0;
    let mut zero_ok = true;
    for seed in 0..100 {
        let mut cfg = SyntheticConfig::for_spec(SpecName::Eq4, &truth);
        cfg.seed = 20_000 + seed;
        cfg.effect_sd = 0.5;
        cfg.effect_correlation = 1.0;
        cfg.noise_sd = 0.3;
        let (data, _) = generate_synthetic(&cfg, SpecName::Eq4).unwrap();
        let d = build(SpecName::Eq4, &data, &BuildOptions::default()).unwrap().design;
        let fe = lsdv_fit(&d).unwrap();
        let re = random_effects_fit(&d).unwrap();
        let h = hausman_test(&fe, &re, &common_slopes(&fe, &re)).unwrap();
        if h.valid && h.p_value < 0.05 {
            rejections += 1;
        }
        if seed == 0 {
            let same = hausman_test(&fe, &fe, &common_slopes(&fe, &fe)).unwrap();
            zero_ok = same.statistic == 0.0 && same.p_value == 1.0;
        }
    }
    check(zero_ok, || "identical fits did not give H = 0, p = 1".into())?;
    check(rejections >= 80, || format!("{rejections}/100 rejections"))?;
    Ok(format!("H(q=0.5, V=0.25) = 1, identical fits H = 0 p = 1, {rejections}/100 rejections"))
}

fn diagnostics() -> Outcome {
    let constant = durbin_watson(&[vec![0.7; 6]]).unwrap();
    check(constant == 0.0, || format!("constant residuals DW {constant}"))?;
    let alternating = durbin_watson(&[vec![1.0, -1.0, 1.0, -1.0]]).unwrap();
    check(alternating == 3.0, || format!("alternating DW {alternating}"))?;
    let mut rng = XorShift64Star::new(6);
    let white: Vec<f64> = (0..10_000).map(|_| rng.standard_normal()).collect();
    let dw = durbin_watson(&[white]).unwrap();
    check((1.9..=2.1).contains(&dw), || format!("white-noise DW {dw}"))?;

    let index: Vec<PanelIndex> = (0..8).map(|t| PanelIndex::new("A", "m", 1990 + t)).collect();
    let x: Vec<f64> = (0..8).map(|t| t as f64 * 0.5 - 1.0).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let d = DesignMatrix::new(y, vec![x], vec!["x".into()], index, Effects::None, true).unwrap();
    let r2 = ols_fit(&d).unwrap().r_squared;
    check((r2 - 1.0).abs() < 1e-12, || format!("exact-fit R² {r2}"))?;
    Ok(format!("constant 0, alternating 3, white noise {dw:.4}, exact-fit R² 1"))
}

fn estimate_args(spec: SpecName) -> Vec<String> {
    let mut a = vec![
        "estimate".to_string(),
        "--spec".into(),
        spec.as_str().into(),
        "--input".into(),
        common::fixture("panel_302.csv").display().to_string(),
    ];
    if spec.is_agglomeration() {
        a.push("--include-leader".into());
    }
    a
}

fn run_in_process(args: &[String]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["negpanel".to_string()];
    argv.extend_from_slice(args);
    match negpanel::cli::run(argv, &mut out, &mut err) {
        0 => Ok(String::from_utf8(out).unwrap()),
        code => Err(format!("exit {code}: {}", String::from_utf8_lossy(&err))),
    }
}

fn table_structure(spec: SpecName, text: &str) -> Result<(), String> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    let names = spec.column_names();
    let k = names.len() - 1;
    let mut expected_header = vec!["Variable".to_string()];
    expected_header.extend(names.iter().cloned());
    expected_header.extend(["R²".to_string(), "DW".to_string()]);
    let header = lines.iter().find(|l| l.starts_with("Variable")).ok_or("no header row")?;
    let got: Vec<String> = header.split_whitespace().map(str::to_string).collect();
    check(got == expected_header, || format!("{spec}: header {got:?}"))?;

    for (label, n_coef) in [("LSDV", k), ("Random effects", k + 1)] {
        let at = lines.iter().position(|l| *l == label).ok_or_else(|| format!("{spec}: no {label} block"))?;
        let row = |i: usize, prefix: &str| -> Result<Vec<&str>, String> {
            let l = lines.get(at + i).ok_or("truncated block")?;
            let rest = l.strip_prefix(prefix).ok_or_else(|| format!("{spec}: expected '{prefix}' got '{l}'"))?;
            Ok(rest.split_whitespace().collect())
        };
        let coef = row(1, "  Coefficients")?;
        let t = row(2, "  T-stat.")?;
        let p = row(3, "  L. signif.")?;
        check(coef.len() == n_coef + 2, || format!("{spec} {label}: {} coefficient cells", coef.len()))?;
        check(t.len() == n_coef && p.len() == n_coef, || format!("{spec} {label}: unmatched t/p cells"))?;
        for c in &coef {
            c.trim_end_matches('*').parse::<f64>().map_err(|_| format!("{spec}: bad cell {c}"))?;
        }
        for cell in t.iter().chain(&p) {
            check(cell.starts_with('(') && cell.ends_with(')'), || format!("{spec}: unparenthesised {cell}"))?;
        }
        for cell in &p {
            let v: f64 = cell.trim_matches(|c| c == '(' || c == ')').parse().map_err(|_| format!("bad p {cell}"))?;
            check((0.0..=1.0).contains(&v), || format!("{spec}: p {v}"))?;
        }
    }
    let footer = |label: &str| -> Result<String, String> {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(label))
            .map(|s| s.trim().to_string())
            .ok_or_else(|| format!("{spec}: no '{label}' row"))
    };
    let units = 45;
    let dof = format!("{} - {}", 302 - k - units, 302 - k - 1);
    check(footer("Degrees of freedom")? == dof, || format!("{spec}: dof, expected {dof}"))?;
    check(footer("Number of observations")? == "302 - 302", || format!("{spec}: n"))?;
    let sd = footer("Residual SD")?;
    check(sd.split(" - ").count() == 2, || format!("{spec}: residual SD '{sd}'"))?;
    let h = footer("T.HAUSMAN")?;
    h.split_whitespace()
        .next()
        .unwrap_or("")
        .trim_end_matches('*')
        .parse::<f64>()
        .map_err(|_| format!("{spec}: Hausman '{h}'"))?;
    check(text.contains("(*) Coefficient statistically significant at 5%."), || "no footnote".into())?;
    Ok(())
}

fn structural_reproduction() -> Outcome {
    let specs = [SpecName::Eq3, SpecName::Eq3p, SpecName::Eq4, SpecName::Eq5, SpecName::Eq5p];
    for spec in specs {
        let args = estimate_args(spec);
        let first = run_in_process(&args)?;
        let second = run_in_process(&args)?;
        check(first == second, || format!("{spec}: in-process runs differ"))?;
        let bin = Command::new(env!("CARGO_BIN_EXE_negpanel"))
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        check(bin.status.success(), || format!("{spec}: binary failed"))?;
        check(bin.stdout == first.as_bytes(), || format!("{spec}: binary output differs"))?;
        table_structure(spec, &first)?;
    }
    Ok("eq3, eq3p, eq4, eq5, eq5p tables: triplets, dof, n = 302, residual SD, Hausman; byte-stable".into())
}

fn weighted_oracle() -> Outcome {
    let mut worst = 0.0_f64;
    let mut differs = 0;
    let mut runs = 0;
    for seed in 0..40u64 {
        let spec = if seed % 2 == 0 { SpecName::Eq3w } else { SpecName::Eq4w };
        let mut cfg = SyntheticConfig::for_spec(spec.base(), &vec![0.2; spec.base().column_names().len()]);
        cfg.seed = 30_000 + seed;
        cfg.missing_rate = 0.15;
        let (data, _) = generate_synthetic(&cfg, spec).unwrap();
        let base = build(spec.base(), &data, &BuildOptions::default()).unwrap().design;
        let weighted = build(spec, &data, &BuildOptions::default()).unwrap().design;
        let w = employment_weights(&data, spec, base.index()).unwrap();
        let x = base.regressors();
        let n = x.nrows();
        let xw = DMatrix::from_fn(n, x.ncols() + 1, |i, j| w[i] * if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let yw = DVector::from_fn(n, |i, _| w[i] * base.response()[i]);
        let oracle = xw.svd(true, true).solve(&yw, 1e-14).unwrap();
        let fit = ols_fit(&weighted).unwrap();
        for (a, b) in fit.coefficients.iter().zip(oracle.iter()) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
        let plain = ols_fit(&base).unwrap();
        if plain.coefficients.iter().zip(&fit.coefficients).any(|(a, b)| (a - b).abs() > 1e-8) {
            differs += 1;
        }
        runs += 1;
    }
    check(worst <= 1e-10, || format!("max gap {worst:e}"))?;
    check(differs == runs, || format!("weighted equals unweighted in {} runs", runs - differs))?;
    Ok(format!("{runs} panels, max gap {worst:.1e}"))
}

fn main() {
    type Criterion = (&'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("equilibrium correctness", Duration::from_secs(1), equilibrium_correctness),
        ("log-linear consistency", Duration::from_secs(10), log_linear_consistency),
        ("LSDV / within equivalence", Duration::from_secs(10), estimator_equivalence),
        ("coefficient recovery", Duration::from_secs(60), coefficient_recovery),
        ("Hausman behaviour", Duration::from_secs(60), hausman_behavior),
        ("diagnostics", Duration::from_secs(10), diagnostics),
        ("structural reproduction", Duration::from_secs(60), structural_reproduction),
        ("weighted-alternative oracle", Duration::from_secs(60), weighted_oracle),
    ];
    let mut failures = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?} > {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} ({elapsed:.2?})", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {} {name}: {detail} ({elapsed:.2?})", i + 1);
            }
        }
    }
    if failures > 0 {
        println!("{failures} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
