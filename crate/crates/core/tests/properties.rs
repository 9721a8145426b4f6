use proptest::prelude::*;

use rot_core::coloc::{rcol, rcol_cb_gaussian};
use rot_core::sensitivity::{multinomial_cov, plan_gradient};
use rot_core::space::ConstraintOperator;
use rot_core::{
    divergence, plan_covariance, solve, CostVector, GroundSpace, Metric, Prob, Regularizer, SampleMode,
    SolverOptions,
};

fn prob(n: usize) -> impl Strategy<Value = Prob> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| Prob::from_masses(&w).unwrap())
}

/// Random points on a line and two full-support marginals.
fn instance() -> impl Strategy<Value = (CostVector, Prob, Prob)> {
    (2usize..=6).prop_flat_map(|n| {
        (prop::collection::vec(0.0f64..2.0, n), prob(n), prob(n)).prop_map(move |(xs, r, s)| {
            let space = GroundSpace::new(xs.into_iter().map(|x| vec![x]).collect()).unwrap();
            (CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap(), r, s)
        })
    })
}

fn kind() -> impl Strategy<Value = Regularizer> {
    (0usize..5).prop_map(|k| Regularizer::all_kinds(0.5)[k])
}

fn plan_for(reg: Regularizer, c: &CostVector, r: &Prob, s: &Prob, lambda: f64) -> rot_core::TransportPlan {
    solve(reg, c, r, s, lambda, &SolverOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plans_are_feasible_and_positive((c, r, s) in instance(), reg in kind(), lambda in 0.1f64..3.0) {
        let plan = plan_for(reg, &c, &r, &s, lambda);
        let n = c.n();
        let sums = ConstraintOperator::square(n).apply(&plan.to_full());
        for i in 0..n {
            prop_assert!((sums[i] - r.weights()[i]).abs() <= 1e-9);
            prop_assert!((sums[n + i] - s.weights()[i]).abs() <= 1e-9);
        }
        prop_assert!(plan.min_entry() > 0.0);
        prop_assert!(divergence(&c, &plan) >= 0.0);
    }

    #[test]
    fn metric_costs_are_symmetric(pts in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..8), p in 1.0f64..3.0) {
        let space = GroundSpace::new(pts.into_iter().map(|(x, y)| vec![x, y]).collect()).unwrap();
        for metric in [Metric::Euclidean, Metric::SqEuclidean] {
            let c = CostVector::from_metric(&space, p, metric).unwrap();
            prop_assert!(c.is_symmetric(0.0));
        }
    }

    #[test]
    fn gradient_inverts_constraints((c, r, s) in instance(), reg in kind(), lambda in 0.2f64..2.0) {
        let plan = plan_for(reg, &c, &r, &s, lambda);
        let g = plan_gradient(reg, &plan).unwrap().grad_phi;
        let n = c.n();
        let a = ConstraintOperator::square(n).materialize_reduced();
        let id = nalgebra::DMatrix::<f64>::identity(2 * n - 1, 2 * n - 1);
        prop_assert!((a * g - id).amax() < 1e-9);
    }

    #[test]
    fn covariances_are_psd((c, r, s) in instance(), reg in kind(), v in prop::collection::vec(-1.0f64..1.0, 36)) {
        let sigma = multinomial_cov(&r);
        let n = r.len();
        for i in 0..n {
            prop_assert!(sigma.row(i).sum().abs() < 1e-15);
        }
        let plan = plan_for(reg, &c, &r, &s, 0.7);
        for mode in [SampleMode::OneSample, SampleMode::TwoSample { delta: 0.3 }] {
            let cov = plan_covariance(reg, &plan, mode).unwrap();
            let m = cov.materialize().unwrap();
            prop_assert!((&m - m.transpose()).amax() < 1e-12);
            prop_assert!(cov.quadratic_form(&v[..n * n]) >= -1e-12);
        }
    }

    #[test]
    fn cost_shift_leaves_plan_and_gradient((c, r, s) in instance(), shift in 0.1f64..5.0) {
        let shifted = c.shifted(shift).unwrap();
        let a = plan_for(Regularizer::Entropy, &c, &r, &s, 0.5);
        let b = plan_for(Regularizer::Entropy, &shifted, &r, &s, 0.5);
        for (x, y) in a.entries().iter().zip(b.entries()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        let ga = plan_gradient(Regularizer::Entropy, &a).unwrap().grad_phi;
        let gb = plan_gradient(Regularizer::Entropy, &b).unwrap().grad_phi;
        prop_assert!((ga - gb).amax() < 1e-5);
    }

    #[test]
    fn rcol_is_lipschitz_in_total_variation((c, r, s) in instance(), l1 in 0.1f64..2.0, l2 in 0.1f64..2.0) {
        let a = plan_for(Regularizer::Entropy, &c, &r, &s, l1);
        let b = plan_for(Regularizer::Burg, &c, &r, &s, l2);
        let ca = rcol(&a, &c, None).unwrap();
        let cb = rcol(&b, &c, None).unwrap();
        let tv: f64 = a.entries().iter().zip(b.entries()).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!(ca.sup_distance(&cb) <= tv + 1e-12);
        prop_assert!(ca.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((ca.values.last().unwrap() - 1.0).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gaussian_quantile_shrinks_with_alpha((c, r, s) in instance(), seed in any::<u64>()) {
        let plan = plan_for(Regularizer::Entropy, &c, &r, &s, 0.5);
        let cov = plan_covariance(Regularizer::Entropy, &plan, SampleMode::OneSample).unwrap();
        let widths: Vec<f64> = [0.01, 0.05, 0.1, 0.3]
            .iter()
            .map(|&a| rcol_cb_gaussian(&plan, &cov, &c, 400, None, a, 400, seed).unwrap().half_width.unwrap())
            .collect();
        prop_assert!(widths.windows(2).all(|w| w[0] >= w[1]));
        // Half-width is the quantile over sqrt(n).
        let w100 = rcol_cb_gaussian(&plan, &cov, &c, 100, None, 0.05, 400, seed).unwrap().half_width.unwrap();
        prop_assert!((w100 - 2.0 * widths[1]).abs() <= 1e-12 * w100.max(1.0));
    }
}

#[test]
fn reduced_operator_has_full_row_rank() {
    for n in 1..=6 {
        let a = ConstraintOperator::square(n).materialize_reduced();
        let rank = a.clone().svd(false, false).rank(1e-10);
        assert_eq!(rank, 2 * n - 1, "N = {n}");
    }
}
