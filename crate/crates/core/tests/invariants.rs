use holofit_core::legendre::{psi_all, tensor_eval};
use holofit_core::measurement::{build_system, draw_samples};
use holofit_core::model::ProductTarget;
use holofit_core::multiindex::{hyperbolic_cross, HyperbolicCross};
use holofit_core::oracles::{sigma_curve, sigma_s};
use holofit_core::solver::{prox_group, solve, SRLassoProblem};
use holofit_core::{IndexSet, MultiIndex};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gram_dist(a: &DMatrix<f64>, b: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let d = a - b;
    (&d * g * d.transpose()).trace().max(0.0).sqrt()
}

fn spd(entries: &[f64], k: usize) -> DMatrix<f64> {
    let b = DMatrix::from_column_slice(k, k, &entries[..k * k]);
    &b * b.transpose() + DMatrix::identity(k, k) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_is_nonexpansive(
        z1 in prop::collection::vec(-3.0f64..3.0, 12),
        z2 in prop::collection::vec(-3.0f64..3.0, 12),
        t in prop::collection::vec(0.0f64..2.0, 4),
        g in prop::collection::vec(-1.0f64..1.0, 9),
    ) {
        let g = spd(&g, 3);
        let a = DMatrix::from_row_slice(4, 3, &z1);
        let b = DMatrix::from_row_slice(4, 3, &z2);
        let pa = prox_group(&a, &t, &g).unwrap();
        let pb = prox_group(&b, &t, &g).unwrap();
        prop_assert!(gram_dist(&pa, &pb, &g) <= gram_dist(&a, &b, &g) + 1e-12);
    }

    #[test]
    fn sigma_curve_is_nonincreasing(
        c in prop::collection::vec(-2.0f64..2.0, 1..30),
        q in 0.2f64..2.0,
    ) {
        let n = c.len();
        let c = DMatrix::from_column_slice(n, 1, &c);
        let g = DMatrix::identity(1, 1);
        let curve = sigma_curve(&c, q, &g).unwrap();
        prop_assert_eq!(curve.len(), n + 1);
        prop_assert!(curve.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert!(curve[n] == 0.0);
        for s in [0, n / 2, n] {
            let direct = sigma_s(&c, s, q, &g).unwrap();
            prop_assert!((direct - curve[s]).abs() <= 1e-10 * (1.0 + direct));
        }
    }

    #[test]
    fn hyperbolic_cross_count_matches_enumeration(order in 1u64..40, dims in 0u32..6) {
        let hc = HyperbolicCross::new(order, dims).unwrap();
        let set = hc.materialize();
        prop_assert_eq!(hc.count(), set.len() as u128);
        prop_assert!(set.is_lower());
        prop_assert!(set.iter().all(|nu| hc.contains(nu)));
    }

    #[test]
    fn psi_table_matches_tensor_eval(y in -1.0f64..=1.0, k in 0u32..40) {
        let mut buf = vec![0.0; k as usize + 1];
        psi_all(y, &mut buf);
        let direct = tensor_eval(&MultiIndex::unit(1, k), &[y]).unwrap();
        prop_assert!((buf[k as usize] - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }
}

#[test]
fn index_set_json_round_trip() {
    let set = hyperbolic_cross(9).unwrap();
    let back = IndexSet::from_json(&set.to_json()).unwrap();
    assert_eq!(back.members(), set.members());
    assert_eq!(back.digest(), set.digest());
}

#[test]
fn solve_is_invariant_under_row_permutation() {
    let target = ProductTarget::power_law(4, 1.5).unwrap();
    let set = HyperbolicCross::new(6, 4).unwrap().materialize();
    let sys = build_system(&target, &set, draw_samples(40, 4, 5).unwrap(), 0.0, 5).unwrap();
    let gamma = 1e-7;
    let lambda = 0.25 / (40f64).sqrt();
    let base = solve(&SRLassoProblem::from_system(&sys, lambda).unwrap(), gamma, 200_000).unwrap();
    let perm: Vec<usize> = (0..40).rev().collect();
    let permuted = sys.permuted(&perm);
    let other = solve(&SRLassoProblem::from_system(&permuted, lambda).unwrap(), gamma, 200_000).unwrap();
    assert!(base.converged && other.converged);
    assert!((base.objective - other.objective).abs() <= 2.0 * gamma);
}

#[test]
fn restart_objectives_never_increase() {
    let target = ProductTarget::power_law(3, 1.5).unwrap();
    let set = HyperbolicCross::new(8, 3).unwrap().materialize();
    let sys = build_system(&target, &set, draw_samples(30, 3, 9).unwrap(), 0.01, 9).unwrap();
    let sol = solve(&SRLassoProblem::from_system(&sys, 0.05).unwrap(), 1e-8, 100_000).unwrap();
    assert!(sol.restart_objectives.len() > 1);
    assert!(sol.restart_objectives.windows(2).all(|w| w[1] <= w[0]));
}
