//! Property tests of the dual solver over arbitrary supports and budgets.

use proptest::prelude::*;

use drspcrl_core::dual::{
    kl_divergence, solve_dual, worst_case_distribution, DualSolverConfig, ValueSupport,
};

fn arb_support() -> impl Strategy<Value = ValueSupport> {
    (2usize..=5)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(0.05..1.0f64, n),
            )
        })
        .prop_map(|(values, raw)| {
            let z: f64 = raw.iter().sum();
            let probs = raw.into_iter().map(|p| p / z).collect();
            ValueSupport::new(values, probs).expect("normalized support")
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn robust_value_is_bounded_and_monotone(support in arb_support(), eps in 0.0..2.0f64) {
        let config = DualSolverConfig::default();
        let solution = solve_dual(&support, eps, &config).unwrap();
        let min = support.min_supported_value();
        let nominal = support.nominal_expectation();
        prop_assert!(solution.robust_value >= min - 1e-9);
        prop_assert!(solution.robust_value <= nominal + 1e-9);

        let tighter = solve_dual(&support, eps * 0.5, &config).unwrap();
        prop_assert!(solution.robust_value <= tighter.robust_value + 1e-8);
    }

    #[test]
    fn worst_case_is_a_distribution_inside_the_ball(support in arb_support(), eps in 0.001..1.5f64) {
        let config = DualSolverConfig::default();
        let solution = solve_dual(&support, eps, &config).unwrap();
        let total: f64 = solution.worst_case_probs.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for (w, p) in solution.worst_case_probs.iter().zip(support.probs()) {
            prop_assert!(*w >= 0.0);
            if *p == 0.0 {
                prop_assert!(*w == 0.0, "absolute continuity violated");
            }
        }
        let kl = kl_divergence(&solution.worst_case_probs, support.probs()).unwrap();
        prop_assert!(kl <= eps + 1e-6, "worst case left the ball: KL {kl} > {eps}");

        // Interior solutions exhaust the budget and match the tilt formula.
        if !solution.at_boundary {
            prop_assert!((kl - eps).abs() < 1e-6);
            let tilt = worst_case_distribution(&support, solution.beta_star).unwrap();
            for (a, b) in solution.worst_case_probs.iter().zip(&tilt) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn worst_case_expectation_equals_the_dual_value(support in arb_support(), eps in 0.001..1.5f64) {
        // Strong duality: the tilted distribution attains the dual optimum.
        let config = DualSolverConfig::default();
        let solution = solve_dual(&support, eps, &config).unwrap();
        let attained: f64 = solution
            .worst_case_probs
            .iter()
            .zip(support.values())
            .map(|(w, v)| w * v)
            .sum();
        prop_assert!(
            (attained - solution.robust_value).abs() < 1e-5,
            "primal {attained} vs dual {}",
            solution.robust_value
        );
    }
}
