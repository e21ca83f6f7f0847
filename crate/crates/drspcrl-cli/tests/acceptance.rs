//! Acceptance suite. Each test is one acceptance criterion, pinned to its
//! stated tolerance and runtime budget, and prints a pass line with the
//! measured margins. Run with `cargo test -p drspcrl-cli --test acceptance`.

use std::fs;
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use drspcrl_core::agent::trainer::{AgentState, TrainEnv, Trainer};
use drspcrl_core::agent::TrainConfig;
use drspcrl_core::curriculum::{CurriculumState, Scheduler, SchedulerConfig};
use drspcrl_core::dual::{solve_dual, DualSolverConfig};
use drspcrl_core::env::chain::{ChainConfig, ChainEnv, CORRIDOR};
use drspcrl_core::eval::{evaluate_policy, PerturbationKind, TablePolicy};
use drspcrl_core::tabular::{robust_policy_evaluation, robust_value_iteration, TabularPolicy};
use drspcrl_core::verify;

const ACCEPT_SEED: u64 = 90210;

#[test]
fn criterion_01_dual_oracle_agreement() {
    let start = Instant::now();
    let solver = verify::production_dual_solver();
    let results = verify::dual_suite(200, ACCEPT_SEED, &solver);
    let elapsed = start.elapsed();
    let agreement = results
        .iter()
        .find(|r| r.name == "dual.oracle_agreement")
        .expect("suite reports agreement");
    assert!(agreement.passed, "{}", agreement.detail);
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "runtime {:.1}s exceeds the 2 minute budget",
        elapsed.as_secs_f64()
    );
    println!(
        "[criterion 1] PASS dual vs brute-force oracle on 200 supports x 4 budgets; worst gap {:.3e}; {:.1}s",
        agreement.max_error,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_02_envelope_identity() {
    let start = Instant::now();
    let results = verify::envelope_suite(100, ACCEPT_SEED);
    let elapsed = start.elapsed();
    let r = &results[0];
    assert!(r.passed, "{}", r.detail);
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "runtime {:.1}s exceeds the 30 second budget",
        elapsed.as_secs_f64()
    );
    println!(
        "[criterion 2] PASS envelope identity on 100 interior instances; worst relative error {:.3e}; {:.1}s",
        r.max_error,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_03_limit_cases() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ACCEPT_SEED + 3);
    let config = DualSolverConfig::default();
    let mut worst_zero = 0.0f64;
    let mut worst_saturated = 0.0f64;
    for _ in 0..100 {
        let support = verify::random_support(&mut rng);
        let zero = solve_dual(&support, 0.0, &config).unwrap();
        worst_zero = worst_zero.max((zero.robust_value - support.nominal_expectation()).abs());

        let m = support.min_supported_value();
        let mass: f64 = support
            .values()
            .iter()
            .zip(support.probs())
            .filter(|(v, p)| **p > 0.0 && **v <= m + 1e-12 * m.abs().max(1.0))
            .map(|(_, p)| *p)
            .sum();
        let saturated = solve_dual(&support, -mass.ln() + 0.05, &config).unwrap();
        worst_saturated = worst_saturated.max((saturated.robust_value - m).abs());
        assert_eq!(saturated.beta_star, 0.0);
    }
    assert!(worst_zero <= 1e-9, "zero-budget gap {worst_zero}");
    assert!(worst_saturated <= 1e-9, "saturated-budget gap {worst_saturated}");
    println!(
        "[criterion 3] PASS limit cases: zero-budget gap {worst_zero:.3e}, saturated-budget gap {worst_saturated:.3e}"
    );
}

#[test]
fn criterion_04_robust_value_iteration_against_oracle() {
    let start = Instant::now();
    let results = verify::mdp_suite(50, ACCEPT_SEED);
    let elapsed = start.elapsed();
    for r in &results {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
    let vi = results
        .iter()
        .find(|r| r.name == "mdp.vi_matches_oracle_vi")
        .unwrap();
    println!(
        "[criterion 4] PASS robust VI vs oracle VI on 50 random MDPs (worst sup-norm gap {:.3e}), ordering and optimality checks included; {:.1}s",
        vi.max_error,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_05_scheduler_dynamics() {
    let results = verify::scheduler_suite(ACCEPT_SEED);
    for r in &results {
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
    println!(
        "[criterion 5] PASS scheduler dynamics: fixed point, stalling point, and 100k-step fuzz per variant"
    );
}

#[test]
fn criterion_06_gradient_exactness() {
    let start = Instant::now();
    let results = verify::gradient_suite(ACCEPT_SEED);
    let elapsed = start.elapsed();
    let r = &results[0];
    assert!(r.passed, "{}", r.detail);
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "runtime {:.1}s exceeds the 1 minute budget",
        elapsed.as_secs_f64()
    );
    println!(
        "[criterion 6] PASS network gradients vs finite differences; worst relative error {:.3e}; {:.1}s",
        r.max_error,
        elapsed.as_secs_f64()
    );
}

struct SeedOutcome {
    robust_sp: f64,
    robust_vanilla: f64,
    nominal_sp: f64,
    nominal_vanilla: f64,
    final_epsilon: f64,
    epsilon_was_low_early: bool,
}

struct TradeoffRuns {
    outcomes: Vec<SeedOutcome>,
    seconds: f64,
}

fn train_chain(seed: u64, scheduler: SchedulerConfig) -> (Vec<f64>, TabularPolicy) {
    let config = TrainConfig {
        total_iterations: 300,
        rollout_steps: 256,
        num_minibatches: 4,
        policy_lr: 0.02,
        gamma: 0.7,
        ..TrainConfig::default()
    };
    let env = TrainEnv::Chain(ChainEnv::new(ChainConfig::default()));
    let curriculum = CurriculumState::new(0.0, 1.0, 0.5, 0.05);
    let mut trainer =
        Trainer::new(config, env, curriculum, Scheduler::new(scheduler), seed).unwrap();
    let mut epsilons = Vec::with_capacity(300);
    for _ in 0..300 {
        epsilons.push(trainer.train_iteration().unwrap().epsilon);
    }
    let policy = match &trainer.agent {
        AgentState::Tabular(agent) => agent.stochastic_policy(),
        _ => unreachable!("chain training uses the tabular agent"),
    };
    (epsilons, policy)
}

fn tradeoff_runs() -> &'static TradeoffRuns {
    static RUNS: OnceLock<TradeoffRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mdp = ChainEnv::new(ChainConfig::default()).to_tabular();
        let outcomes = (0..10u64)
            .map(|i| {
                let seed = 1000 * i + 17;
                let (epsilons, sp_policy) = train_chain(seed, SchedulerConfig::DrSpcrl);
                let (_, vanilla_policy) = train_chain(
                    seed,
                    SchedulerConfig::Linear {
                        eps_step: 0.0,
                        start_iteration: 0,
                    },
                );
                let eval = |policy: &TabularPolicy, eps: f64| {
                    robust_policy_evaluation(&mdp, policy, eps, 1e-10, 1_000_000).unwrap()[CORRIDOR]
                };
                SeedOutcome {
                    robust_sp: eval(&sp_policy, 1.0),
                    robust_vanilla: eval(&vanilla_policy, 1.0),
                    nominal_sp: eval(&sp_policy, 0.0),
                    nominal_vanilla: eval(&vanilla_policy, 0.0),
                    final_epsilon: *epsilons.last().unwrap(),
                    epsilon_was_low_early: epsilons.iter().any(|e| *e < 0.5),
                }
            })
            .collect();
        TradeoffRuns {
            outcomes,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_07_end_to_end_robustness_tradeoff() {
    let runs = tradeoff_runs();
    let robust_wins = runs
        .outcomes
        .iter()
        .filter(|o| o.robust_sp > o.robust_vanilla)
        .count();
    let nominal_close = runs
        .outcomes
        .iter()
        .filter(|o| o.nominal_sp >= 0.8 * o.nominal_vanilla)
        .count();
    assert!(
        robust_wins >= 8,
        "robust evaluation at the budget won in only {robust_wins}/10 seeds"
    );
    assert!(
        nominal_close >= 8,
        "nominal evaluation stayed within 20 percent in only {nominal_close}/10 seeds"
    );
    assert!(
        runs.seconds < 600.0,
        "runtime {:.0}s exceeds the 10 minute budget",
        runs.seconds
    );
    println!(
        "[criterion 7] PASS exact robust evaluation at the budget favored the curriculum policy in {robust_wins}/10 seeds, nominal within 20% in {nominal_close}/10; both arms trained in {:.0}s",
        runs.seconds
    );
}

#[test]
fn criterion_08_curriculum_progression() {
    let runs = tradeoff_runs();
    let reached = runs
        .outcomes
        .iter()
        .filter(|o| o.final_epsilon >= 0.9)
        .count();
    let non_constant = runs
        .outcomes
        .iter()
        .filter(|o| o.epsilon_was_low_early)
        .count();
    assert!(reached >= 8, "budget reached 0.9 in only {reached}/10 seeds");
    assert_eq!(
        non_constant, 10,
        "the trajectory must pass through low budgets (it is a curriculum, not a constant)"
    );
    println!(
        "[criterion 8] PASS curriculum reached 0.9 of the budget by iteration 300 in {reached}/10 seeds with non-constant trajectories"
    );
}

#[test]
fn criterion_09_harness_statistical_validity() {
    let chain = ChainConfig::default();
    let mut env = ChainEnv::new(chain.clone());
    let mdp = env.to_tabular();
    let greedy = robust_value_iteration(&mdp, 0.0, 1e-10, 100_000).unwrap().policy;
    let policy = TablePolicy {
        n_states: 7,
        n_actions: 2,
        policy: TabularPolicy::Deterministic(greedy.clone()),
    };

    for p in [0.1, 0.3, 0.5] {
        let mut mixed = vec![0.0; 14];
        for s in 0..7 {
            for a in 0..2 {
                mixed[s * 2 + a] = if greedy[s] == a { 1.0 - p } else { 0.0 } + p / 2.0;
            }
        }
        let exact = robust_policy_evaluation(
            &mdp,
            &TabularPolicy::Stochastic(mixed),
            0.0,
            1e-12,
            1_000_000,
        )
        .unwrap()[chain.start_state];
        let report = evaluate_policy(
            &policy,
            &mut env,
            PerturbationKind::Action,
            p,
            100,
            ACCEPT_SEED,
            chain.gamma,
        )
        .unwrap();
        let gap = (report.mean_return - exact).abs();
        assert!(
            gap <= 3.0 * report.std_error,
            "p {p}: harness {} vs exact {exact} exceeds 3 standard errors ({:.4})",
            report.mean_return,
            3.0 * report.std_error
        );
    }

    let nominal = evaluate_policy(
        &policy,
        &mut env,
        PerturbationKind::Observation,
        0.0,
        100,
        ACCEPT_SEED,
        chain.gamma,
    )
    .unwrap();
    for kind in [
        PerturbationKind::Observation,
        PerturbationKind::Action,
        PerturbationKind::Environment,
    ] {
        let report =
            evaluate_policy(&policy, &mut env, kind, 0.0, 100, ACCEPT_SEED, chain.gamma).unwrap();
        assert_eq!(
            report.per_episode_returns, nominal.per_episode_returns,
            "{:?} at level zero must reproduce nominal returns bit-exactly",
            kind
        );
    }
    println!(
        "[criterion 9] PASS action-noise sweep matches exact mixed-policy values within 3 standard errors at p in {{0.1, 0.3, 0.5}}; all level-zero perturbations are bit-exact"
    );
}

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let dir = std::env::temp_dir().join(format!("drspcrl-accept-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    let config_path = dir.join("config.toml");
    fs::write(
        &config_path,
        r#"
[experiment]
name = "repro"
master_seed = 5150

[environment]
kind = "chain"

[agent]
total_iterations = 40
rollout_steps = 128
num_minibatches = 4
mini_epochs = 3
policy_lr = 0.02
gamma = 0.7

[curriculum]
lambda_curr = 0.05

[scheduler]
variant = "dr_spcrl"

[evaluation]
episodes = 40

[[evaluation.specs]]
kind = "action"
levels = [0.0, 0.25, 0.5]

[[evaluation.specs]]
kind = "observation"
levels = [0.0, 0.3]
"#,
    )
    .unwrap();

    let train = |out: &PathBuf| {
        let status = Command::new(env!("CARGO_BIN_EXE_drspcrl"))
            .args([
                "train",
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let t1 = dir.join("t1");
    let t2 = dir.join("t2");
    train(&t1);
    train(&t2);
    let m1 = fs::read(t1.join("metrics.csv")).unwrap();
    let m2 = fs::read(t2.join("metrics.csv")).unwrap();
    assert_eq!(m1, m2, "training metrics must be byte-identical across reruns");
    let c1 = fs::read(t1.join("checkpoint.json")).unwrap();
    let c2 = fs::read(t2.join("checkpoint.json")).unwrap();
    assert_eq!(c1, c2, "checkpoints must be byte-identical across reruns");

    let sweep = |out: &PathBuf| {
        let status = Command::new(env!("CARGO_BIN_EXE_drspcrl"))
            .args([
                "sweep",
                "--checkpoint",
                t1.join("checkpoint.json").to_str().unwrap(),
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    };
    let s1 = dir.join("s1");
    let s2 = dir.join("s2");
    sweep(&s1);
    sweep(&s2);
    let w1 = fs::read(s1.join("sweep.csv")).unwrap();
    let w2 = fs::read(s2.join("sweep.csv")).unwrap();
    assert_eq!(w1, w2, "sweep CSVs must be byte-identical across reruns");

    fs::remove_dir_all(&dir).unwrap();
    println!(
        "[criterion 10] PASS identical config and seed reproduce metrics.csv, checkpoint.json and sweep.csv byte-for-byte"
    );
}
