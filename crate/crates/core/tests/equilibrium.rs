mod common;

use common::{oracle_rows, rel};
use nalgebra::DMatrix;
use negpanel::neg_core::{
    fixed_point_defect, log_real_wage, real_wage, reduced_real_wage, solve_equilibrium, wage_brackets, SolverOptions,
};
use negpanel::{NegParameters, SpatialEconomy};
use proptest::prelude::*;

fn three_region() -> SpatialEconomy {
    let t = DMatrix::from_row_slice(3, 3, &[1.0, 1.3, 1.6, 1.25, 1.0, 1.4, 1.7, 1.35, 1.0]);
    SpatialEconomy::new(
        vec!["A".into(), "B".into(), "C".into()],
        vec![1.0, 0.6, 0.4],
        vec![0.5, 0.3, 0.2],
        vec![0.3, 0.4, 0.3],
        t,
        NegParameters::default(),
    )
    .unwrap()
}

fn two_region(share: f64, t12: f64, sigma: f64, mu: f64) -> SpatialEconomy {
    SpatialEconomy::new(
        vec!["big".into(), "small".into()],
        vec![share, 1.0 - share],
        vec![share, 1.0 - share],
        vec![share, 1.0 - share],
        DMatrix::from_row_slice(2, 2, &[1.0, t12, t12, 1.0]),
        NegParameters::new(sigma, mu).unwrap(),
    )
    .unwrap()
}

#[test]
fn matches_independent_oracle() {
    let econ = three_region();
    for endogenous in [false, true] {
        let opts = SolverOptions {
            endogenous_income: endogenous,
            ..SolverOptions::default()
        };
        let s = solve_equilibrium(&econ, &opts).unwrap();
        for (r, o) in oracle_rows().iter().filter(|o| o.endogenous == endogenous).enumerate() {
            assert!(rel(s.nominal_wage[r], o.wage) < 1e-8, "{} w", o.region);
            assert!(rel(s.price_index[r], o.price_index) < 1e-8, "{} G", o.region);
            assert!(rel(s.real_wage[r], o.real_wage) < 1e-8, "{} ω", o.region);
        }
    }
}

#[test]
fn free_transport_equalizes_real_wages() {
    let econ = SpatialEconomy::new(
        vec!["a".into(), "b".into(), "c".into()],
        vec![2.0, 0.3, 0.9],
        vec![0.6, 0.1, 0.3],
        vec![0.0; 3],
        DMatrix::from_element(3, 3, 1.0),
        NegParameters::default(),
    )
    .unwrap();
    let s = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
    for r in 1..3 {
        assert!(rel(s.real_wage[r], s.real_wage[0]) < 1e-8);
    }
}

#[test]
fn reported_residual_bounds_post_hoc_defect() {
    let econ = three_region();
    for endogenous in [false, true] {
        let opts = SolverOptions {
            endogenous_income: endogenous,
            ..SolverOptions::default()
        };
        let s = solve_equilibrium(&econ, &opts).unwrap();
        let defect = fixed_point_defect(&econ, &s, endogenous).unwrap();
        assert!(s.residual >= defect - 1e-14);
    }
}

#[test]
fn solved_state_log_form_matches_reduced_form() {
    let econ = three_region();
    let s = solve_equilibrium(&econ, &SolverOptions::default()).unwrap();
    let p = econ.params();
    for r in 0..3 {
        let (b1, b2) = wage_brackets(&econ, &s, false, r).unwrap();
        let direct = real_wage(s.nominal_wage[r], s.price_index[r], p).unwrap();
        assert!(rel(log_real_wage(b1, b2, p).unwrap().exp(), direct) < 1e-10);
        assert!(rel(reduced_real_wage(b1, b2, p).unwrap(), direct) < 1e-10);
    }
}

#[test]
fn smaller_region_never_gains_as_transport_costs_rise() {
    let grid: Vec<f64> = (0..=12).map(|i| 1.0 + 0.025 * i as f64).collect();
    for sigma in [3.0, 5.0, 8.0] {
        for mu in [0.2, 0.4, 0.6] {
            for share in [0.55, 0.7, 0.85] {
                for endogenous in [false, true] {
                    assert_monotone(share, sigma, mu, endogenous, &grid);
                }
            }
        }
    }
    // No turning point inside [1, 3] in this regime.
    let wide: Vec<f64> = (0..=40).map(|i| 1.0 + 0.05 * i as f64).collect();
    for mu in [0.4, 0.6] {
        assert_monotone(0.7, 3.0, mu, false, &wide);
    }
}

fn assert_monotone(share: f64, sigma: f64, mu: f64, endogenous: bool, grid: &[f64]) {
    let opts = SolverOptions {
        endogenous_income: endogenous,
        ..SolverOptions::default()
    };
    let mut prev = f64::INFINITY;
    for &t in grid {
        let s = solve_equilibrium(&two_region(share, t, sigma, mu), &opts).unwrap();
        let ratio = s.real_wage[1] / s.real_wage[0];
        assert!(
            ratio <= prev + 1e-10,
            "σ={sigma} μ={mu} share={share} endog={endogenous} T={t}: {ratio} > {prev}"
        );
        prev = ratio;
    }
}

fn economy_strategy() -> impl Strategy<Value = SpatialEconomy> {
    (2usize..=4)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.2f64..2.0, n),
                prop::collection::vec(0.1f64..1.0, n),
                prop::collection::vec(0.1f64..1.0, n),
                prop::collection::vec(1.0f64..2.0, n * n),
                2.0f64..8.0,
                0.1f64..0.7,
            )
        })
        .prop_map(|(y, l, phi, t, sigma, mu)| {
            let n = y.len();
            SpatialEconomy::new(
                (0..n).map(|i| format!("r{i}")).collect(),
                y,
                l,
                phi,
                DMatrix::from_row_slice(n, n, &t),
                NegParameters::new(sigma, mu).unwrap(),
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn relabelling_permutes_the_solution(econ in economy_strategy(), rot in 1usize..4) {
        let n = econ.n_regions();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let opts = SolverOptions::default();
        let a = solve_equilibrium(&econ, &opts).unwrap();
        let b = solve_equilibrium(&econ.permuted(&perm), &opts).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!(rel(b.real_wage[new], a.real_wage[old]) < 1e-8);
            prop_assert!(rel(b.nominal_wage[new], a.nominal_wage[old]) < 1e-8);
        }
    }

    #[test]
    fn scaling_incomes_keeps_real_wage_ratios(econ in economy_strategy(), c in 0.1f64..10.0) {
        for endogenous in [false, true] {
            let opts = SolverOptions { endogenous_income: endogenous, ..SolverOptions::default() };
            let a = solve_equilibrium(&econ, &opts).unwrap();
            let b = solve_equilibrium(&econ.with_income_scaled(c), &opts).unwrap();
            for r in 1..econ.n_regions() {
                prop_assert!(rel(b.real_wage[r] / b.real_wage[0], a.real_wage[r] / a.real_wage[0]) < 1e-8);
            }
        }
    }

    #[test]
    fn log_form_round_trips(b1 in 1e-3f64..1e3, b2 in 1e-3f64..1e3, sigma in 1.1f64..20.0, mu in 0.0f64..1.0) {
        let p = NegParameters::new(sigma, mu).unwrap();
        let expected = b1.powf(1.0 / sigma) * b2.powf(-mu / (1.0 - sigma));
        prop_assert!(rel(log_real_wage(b1, b2, p).unwrap().exp(), expected) < 1e-10);
    }
}
