//! Registered verification suites: dual-solver oracle agreement, the
//! envelope identity, robust value iteration against the brute-force inner
//! minimization, scheduler dynamics, and network gradient checks.
//!
//! Each suite returns structured results so the command-line front end can
//! print one line per property and exit nonzero on any failure. The dual
//! suite accepts the solver as a closure so a deliberately corrupted solver
//! can be injected to prove the suite actually detects failures.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curriculum::{drspcrl_step, CurriculumState, Scheduler, SchedulerConfig};
use crate::dual::{solve_dual, DualError, DualSolverConfig, ValueSupport};
use crate::nn::{DualNet, GaussianPolicy, Mlp, MlpSpec};
use crate::simplex::brute_force_inner_min;
use crate::tabular::{
    robust_policy_evaluation, robust_value_iteration, robust_value_iteration_with, TabularMdp,
    TabularPolicy,
};

/// Outcome of one verified property.
#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub detail: String,
}

impl PropertyResult {
    fn new(name: &str, passed: bool, max_error: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            max_error,
            detail,
        }
    }
}

/// Verification scope selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyScope {
    Dual,
    Envelope,
    Mdp,
    Schedulers,
    Gradients,
    All,
}

impl VerifyScope {
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "dual" => Some(Self::Dual),
            "envelope" => Some(Self::Envelope),
            "mdp" => Some(Self::Mdp),
            "schedulers" => Some(Self::Schedulers),
            "gradients" => Some(Self::Gradients),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

/// Runs the selected suites with the standard case counts.
pub fn run_scope(scope: VerifyScope, seed: u64) -> Vec<PropertyResult> {
    let mut results = Vec::new();
    let dual_solver =
        |s: &ValueSupport, eps: f64| Ok(solve_dual(s, eps, &DualSolverConfig::default())?.robust_value);
    match scope {
        VerifyScope::Dual => results.extend(dual_suite(200, seed, &dual_solver)),
        VerifyScope::Envelope => results.extend(envelope_suite(100, seed)),
        VerifyScope::Mdp => results.extend(mdp_suite(50, seed)),
        VerifyScope::Schedulers => results.extend(scheduler_suite(seed)),
        VerifyScope::Gradients => results.extend(gradient_suite(seed)),
        VerifyScope::All => {
            results.extend(dual_suite(200, seed, &dual_solver));
            results.extend(envelope_suite(100, seed));
            results.extend(mdp_suite(50, seed));
            results.extend(scheduler_suite(seed));
            results.extend(gradient_suite(seed));
        }
    }
    results
}

/// Random support of size 2..=4: values in [-10, 10], random probabilities.
pub fn random_support(rng: &mut ChaCha8Rng) -> ValueSupport {
    let size = rng.random_range(2..=4usize);
    let values: Vec<f64> = (0..size).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut probs: Vec<f64> = (0..size).map(|_| rng.random_range(0.05..1.0)).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    ValueSupport::new(values, probs).expect("generated support is valid")
}

/// Dual solver vs the brute-force primal oracle, plus the analytic limit
/// cases. The solver under test is injected so corruption is detectable.
pub fn dual_suite(
    cases: usize,
    seed: u64,
    solver: &dyn Fn(&ValueSupport, f64) -> Result<f64, DualError>,
) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = 1e-3;
    let budgets = [0.01, 0.1, 0.5, 1.0];

    let mut worst_gap = 0.0f64;
    let mut worst_case = String::new();
    let mut agree = true;
    let mut monotone = true;
    let mut bounded = true;
    for case in 0..cases {
        let support = random_support(&mut rng);
        let range = support.values().iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v))
            - support.values().iter().fold(f64::INFINITY, |a, v| a.min(*v));
        let tol = 5e-3 * (1.0 + range);
        let mut previous = f64::INFINITY;
        for eps in budgets {
            let dual = match solver(&support, eps) {
                Ok(v) => v,
                Err(e) => {
                    agree = false;
                    worst_case = format!("case {case} eps {eps}: solver error {e}");
                    continue;
                }
            };
            let oracle = brute_force_inner_min(&support, eps, grid).expect("oracle accepts the support");
            let gap = (dual - oracle).abs();
            if gap > worst_gap {
                worst_gap = gap;
                worst_case = format!("case {case} eps {eps}: dual {dual} oracle {oracle}");
            }
            if gap > tol {
                agree = false;
            }
            if dual > previous + 1e-9 {
                monotone = false;
            }
            previous = dual;
            let min = support.min_supported_value();
            let nominal = support.nominal_expectation();
            if dual < min - 1e-9 || dual > nominal + 1e-9 {
                bounded = false;
            }
        }
    }
    let mut results = vec![
        PropertyResult::new(
            "dual.oracle_agreement",
            agree,
            worst_gap,
            format!("{cases} supports x {} budgets; worst {worst_case}", budgets.len()),
        ),
        PropertyResult::new(
            "dual.monotone_in_budget",
            monotone,
            0.0,
            "robust value non-increasing in the budget".into(),
        ),
        PropertyResult::new(
            "dual.bounds",
            bounded,
            0.0,
            "min(values) <= robust <= nominal expectation".into(),
        ),
    ];

    // Limit cases with exact expectations.
    let mut limit_err = 0.0f64;
    let mut limits_ok = true;
    for _ in 0..50 {
        let support = random_support(&mut rng);
        match solver(&support, 0.0) {
            Ok(v) => {
                let err = (v - support.nominal_expectation()).abs();
                limit_err = limit_err.max(err);
                if err > 1e-9 {
                    limits_ok = false;
                }
            }
            Err(_) => limits_ok = false,
        }
        let m = support.min_supported_value();
        let mass: f64 = support
            .values()
            .iter()
            .zip(support.probs())
            .filter(|(v, p)| **p > 0.0 && **v <= m + 1e-12 * m.abs().max(1.0))
            .map(|(_, p)| *p)
            .sum();
        let threshold = -mass.ln();
        match solver(&support, threshold + 0.1) {
            Ok(v) => {
                let err = (v - m).abs();
                limit_err = limit_err.max(err);
                if err > 1e-9 {
                    limits_ok = false;
                }
            }
            Err(_) => limits_ok = false,
        }
    }
    results.push(PropertyResult::new(
        "dual.limit_cases",
        limits_ok,
        limit_err,
        "zero budget = nominal expectation; saturated budget = supported minimum".into(),
    ));
    results
}

/// Envelope identity: the central difference of the robust value in the
/// budget equals the negative optimal dual variable, on interior instances.
pub fn envelope_suite(cases: usize, seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = DualSolverConfig::default();
    let h = 1e-4;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    let mut passed = true;
    let mut detail = String::new();
    while checked < cases {
        let support = random_support(&mut rng);
        let eps = rng.random_range(0.02..0.6);
        let center = solve_dual(&support, eps, &config).expect("valid support");
        if center.at_boundary {
            continue;
        }
        let lo = solve_dual(&support, eps - h, &config).expect("valid support");
        let hi = solve_dual(&support, eps + h, &config).expect("valid support");
        if lo.at_boundary || hi.at_boundary {
            continue;
        }
        let slope = (hi.robust_value - lo.robust_value) / (2.0 * h);
        let err = (slope + center.beta_star).abs() / center.beta_star.max(1.0);
        if err > worst {
            worst = err;
            detail = format!(
                "slope {slope} vs -beta* {} at eps {eps}",
                -center.beta_star
            );
        }
        if err > 1e-2 {
            passed = false;
        }
        checked += 1;
    }
    vec![PropertyResult::new(
        "envelope.gradient_is_negative_beta",
        passed,
        worst,
        format!("{cases} interior instances; worst {detail}"),
    )]
}

/// Random MDP with every kernel row supported on all states.
pub fn random_mdp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize) -> TabularMdp {
    let rewards: Vec<f64> = (0..n_states * n_actions)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut kernel = vec![0.0; n_states * n_actions * n_states];
    for row in kernel.chunks_mut(n_states) {
        let mut z = 0.0;
        for p in row.iter_mut() {
            *p = rng.random_range(0.05..1.0);
            z += *p;
        }
        row.iter_mut().for_each(|p| *p /= z);
    }
    let gamma = rng.random_range(0.6..0.8);
    TabularMdp::new(n_states, n_actions, rewards, kernel, gamma).expect("generated mdp is valid")
}

/// Robust value iteration with the dual solver against value iteration with
/// the brute-force oracle, plus structural invariants.
pub fn mdp_suite(cases: usize, seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_vi = 0.0f64;
    let mut vi_ok = true;
    let mut order_ok = true;
    let mut dominance_ok = true;
    for case in 0..cases {
        let n_states = rng.random_range(2..=3usize);
        let mdp = random_mdp(&mut rng, n_states, 2);
        let eps = rng.random_range(0.05..0.6);
        let dual_solution = robust_value_iteration(&mdp, eps, 1e-8, 100_000).expect("dual VI converges");
        let oracle = |s: &ValueSupport, e: f64| brute_force_inner_min(s, e, 1e-3);
        // The fixed point is initial-value independent; warm starting from
        // the dual solution just shortens the oracle run.
        let oracle_solution = robust_value_iteration_with(
            &mdp,
            eps,
            1e-6,
            10_000,
            &oracle,
            Some(&dual_solution.values),
        )
        .expect("oracle VI converges");
        let gap = dual_solution
            .values
            .iter()
            .zip(&oracle_solution.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_vi = worst_vi.max(gap);
        if gap > 1e-2 {
            vi_ok = false;
        }

        let nominal = robust_value_iteration(&mdp, 0.0, 1e-8, 100_000).expect("nominal VI converges");
        for (r, n) in dual_solution.values.iter().zip(&nominal.values) {
            if *r > n + 1e-6 {
                order_ok = false;
            }
        }

        // Exhaustive policy dominance on the deterministic policy set.
        if n_states <= 3 {
            for code in 0..(1u32 << n_states) {
                let actions: Vec<usize> =
                    (0..n_states).map(|s| ((code >> s) & 1) as usize).collect();
                let eval = robust_policy_evaluation(
                    &mdp,
                    &TabularPolicy::Deterministic(actions),
                    eps,
                    1e-8,
                    1_000_000,
                )
                .expect("policy evaluation converges");
                for s in 0..n_states {
                    if eval[s] > dual_solution.values[s] + 1e-6 {
                        dominance_ok = false;
                    }
                }
            }
        }
        let _ = case;
    }
    vec![
        PropertyResult::new(
            "mdp.vi_matches_oracle_vi",
            vi_ok,
            worst_vi,
            format!("{cases} random MDPs, sup-norm tolerance 1e-2"),
        ),
        PropertyResult::new(
            "mdp.robust_below_nominal",
            order_ok,
            0.0,
            "robust values elementwise at most nominal values".into(),
        ),
        PropertyResult::new(
            "mdp.greedy_dominates_all_policies",
            dominance_ok,
            0.0,
            "exhaustive deterministic-policy spot check".into(),
        ),
    ]
}

/// Scheduler dynamics: fixed point, stalling point, and interval fuzz.
pub fn scheduler_suite(seed: u64) -> Vec<PropertyResult> {
    let mut results = Vec::new();

    let mut fixed_ok = true;
    let mut fixed_err = 0.0f64;
    for (alpha, lambda) in [(0.5, 0.1), (1.0, 0.05), (0.25, 0.4), (2.0, 0.2)] {
        assert!(2.0 * alpha * lambda < 1.0);
        let mut state = CurriculumState::new(0.3, 1.0, alpha, lambda);
        for _ in 0..1000 {
            drspcrl_step(&mut state, 0.0);
        }
        let err = (state.epsilon_t - 1.0).abs();
        fixed_err = fixed_err.max(err);
        if err > 1e-6 {
            fixed_ok = false;
        }
    }
    results.push(PropertyResult::new(
        "scheduler.zero_beta_reaches_budget",
        fixed_ok,
        fixed_err,
        "1000 steps, tolerance 1e-6, for several (alpha, lambda)".into(),
    ));

    let mut stall_ok = true;
    let mut stall_err = 0.0f64;
    for b in [0.2, 0.7, 1.4, 3.0] {
        let alpha = 0.5;
        let mut state = CurriculumState::new(0.0, 1.0, alpha, 0.05);
        for _ in 0..1000 {
            drspcrl_step(&mut state, b);
        }
        let expected = (1.0 - b / (2.0 * alpha)).max(0.0);
        let err = (state.epsilon_t - expected).abs();
        stall_err = stall_err.max(err);
        if err > 1e-6 {
            stall_ok = false;
        }
    }
    results.push(PropertyResult::new(
        "scheduler.constant_beta_stalls_at_stationary_point",
        stall_ok,
        stall_err,
        "budget minus beta over twice the pacing weight, clamped at zero".into(),
    ));

    let mut bounds_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for config in [
        SchedulerConfig::DrSpcrl,
        SchedulerConfig::Fixed,
        SchedulerConfig::linear_defaults(),
        SchedulerConfig::plateau_defaults(),
        SchedulerConfig::regret_defaults(),
    ] {
        let mut scheduler = Scheduler::new(config);
        let mut state = CurriculumState::new(0.0, 1.0, 0.5, 0.05);
        let mut history = Vec::new();
        for iteration in 1..=100_000u64 {
            history.push(rng.random_range(-2.0..2.0));
            let beta = rng.random_range(0.0..5.0);
            scheduler.advance(&mut state, iteration, beta, &history, &mut rng, |e| e);
            if !(0.0..=1.0).contains(&state.epsilon_t) {
                bounds_ok = false;
            }
        }
    }
    results.push(PropertyResult::new(
        "scheduler.budget_interval_under_fuzz",
        bounds_ok,
        0.0,
        "100k fuzzed steps per variant stay in [0, budget]".into(),
    ));
    results
}

fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, params: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let hi = f(&p);
            p[i] = orig - h;
            let lo = f(&p);
            p[i] = orig;
            (hi - lo) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Gradient exactness of every network path against central differences.
pub fn gradient_suite(seed: u64) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut ok = true;
    for trial in 0..5 {
        let input_dim = rng.random_range(2..=4usize);
        let out_dim = rng.random_range(1..=3usize);
        let spec = MlpSpec::new(input_dim, vec![6, 5], out_dim);
        let mlp = Mlp::init(spec.clone(), &mut rng);
        let x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = mlp.forward_cached(&x);
        let mut analytic = vec![0.0; mlp.n_params()];
        mlp.backward(&cache, &c, &mut analytic);
        let numeric = finite_diff(
            |p| {
                Mlp {
                    spec: spec.clone(),
                    params: p.to_vec(),
                }
                .forward(&x)
                .iter()
                .zip(&c)
                .map(|(o, ci)| o * ci)
                .sum()
            },
            &mlp.params,
        );
        worst = worst.max(max_rel_err(&analytic, &numeric));

        let policy = GaussianPolicy::init(input_dim, vec![6, 5], 2, &mut rng);
        let action = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut grad_mean = vec![0.0; policy.mean_net.n_params()];
        let mut grad_ls = vec![0.0; 2];
        policy.accumulate_log_prob_grad(&x, &action, 1.0, &mut grad_mean, &mut grad_ls);
        let numeric_mean = finite_diff(
            |p| {
                GaussianPolicy {
                    mean_net: Mlp {
                        spec: policy.mean_net.spec.clone(),
                        params: p.to_vec(),
                    },
                    log_std: policy.log_std.clone(),
                }
                .log_prob(&x, &action)
            },
            &policy.mean_net.params,
        );
        worst = worst.max(max_rel_err(&grad_mean, &numeric_mean));

        let dual = DualNet::init(input_dim, vec![6, 5], 1e-3, &mut rng);
        let mut grad_dual = vec![0.0; dual.net.n_params()];
        dual.accumulate_beta_grad(&x, 1.0, &mut grad_dual);
        let numeric_dual = finite_diff(
            |p| {
                DualNet {
                    net: Mlp {
                        spec: dual.net.spec.clone(),
                        params: p.to_vec(),
                    },
                    beta_floor: dual.beta_floor,
                }
                .beta(&x)
            },
            &dual.net.params,
        );
        worst = worst.max(max_rel_err(&grad_dual, &numeric_dual));
        let _ = trial;
    }
    if worst > 1e-5 {
        ok = false;
    }
    vec![PropertyResult::new(
        "gradients.match_finite_differences",
        ok,
        worst,
        "mlp, policy log-prob and dual paths on randomized networks".into(),
    )]
}

/// Convenience: the production dual solver in closure form, plus the same
/// interface for injecting corrupted solvers in tests.
pub fn production_dual_solver() -> impl Fn(&ValueSupport, f64) -> Result<f64, DualError> {
    move |s: &ValueSupport, eps: f64| {
        Ok(solve_dual(s, eps, &DualSolverConfig::default())?.robust_value)
    }
}

/// Inner-minimization wrapper so the oracle VI path stays independent.
pub fn oracle_inner_min() -> impl Fn(&ValueSupport, f64) -> Result<f64, DualError> {
    move |s: &ValueSupport, eps: f64| brute_force_inner_min(s, eps, 1e-3)
}
