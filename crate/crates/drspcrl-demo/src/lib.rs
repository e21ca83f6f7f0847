//! Browser bindings for the interactive demo page.
//!
//! Three operations are exposed, each returning a JSON document the page
//! renders with plain canvas code:
//!
//! - [`solve_dual_json`] — the KL-dual solver on a hand-edited support,
//!   with the dual-objective landscape and the worst-case tilt.
//! - [`chain_robust_curve_json`] — exact robust values of the chain as a
//!   function of the budget, showing where the optimal policy flips from
//!   the risky shortcut to the safe detour.
//! - [`curriculum_trace_json`] — a full tabular training run under a chosen
//!   scheduler, tracing the budget, the dual signal and the returns.
//!
//! Build with the `wasm32-unknown-unknown` target and wasm-bindgen (see the
//! README); everything here also compiles natively so the JSON layer is
//! unit-tested with the ordinary test suite.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use drspcrl_core::agent::trainer::{AgentState, TrainEnv, Trainer};
use drspcrl_core::agent::TrainConfig;
use drspcrl_core::curriculum::{CurriculumState, Scheduler, SchedulerConfig};
use drspcrl_core::dual::{dual_objective, solve_dual, DualSolverConfig, ValueSupport};
use drspcrl_core::env::chain::{ChainConfig, ChainEnv, CORRIDOR, FORK};
use drspcrl_core::tabular::robust_value_iteration;

#[derive(Serialize)]
struct DualExplorerOut {
    beta_star: f64,
    robust_value: f64,
    nominal_value: f64,
    min_value: f64,
    at_boundary: bool,
    point_mass_threshold: f64,
    worst_case_probs: Vec<f64>,
    curve_beta: Vec<f64>,
    curve_objective: Vec<f64>,
}

/// Solves the robust expectation for one support and returns the solution
/// together with the dual-objective landscape over log-spaced beta.
#[wasm_bindgen]
pub fn solve_dual_json(values: Vec<f64>, probs: Vec<f64>, epsilon: f64) -> Result<String, JsError> {
    dual_explorer(values, probs, epsilon).map_err(|e| JsError::new(&e))
}

fn dual_explorer(values: Vec<f64>, probs: Vec<f64>, epsilon: f64) -> Result<String, String> {
    let support = ValueSupport::new(values, probs).map_err(|e| e.to_string())?;
    let config = DualSolverConfig::default();
    let solution = solve_dual(&support, epsilon, &config).map_err(|e| e.to_string())?;

    let mut curve_beta = Vec::new();
    let mut curve_objective = Vec::new();
    if epsilon > 0.0 {
        for i in 0..160 {
            let beta = 10f64.powf(-3.0 + 5.0 * i as f64 / 159.0);
            curve_beta.push(beta);
            curve_objective.push(dual_objective(beta, &support, epsilon).map_err(|e| e.to_string())?);
        }
    }

    let m = support.min_supported_value();
    let mass: f64 = support
        .values()
        .iter()
        .zip(support.probs())
        .filter(|(v, p)| **p > 0.0 && **v <= m + 1e-12 * m.abs().max(1.0))
        .map(|(_, p)| *p)
        .sum();
    let out = DualExplorerOut {
        beta_star: solution.beta_star,
        robust_value: solution.robust_value,
        nominal_value: support.nominal_expectation(),
        min_value: m,
        at_boundary: solution.at_boundary,
        point_mass_threshold: -mass.ln(),
        worst_case_probs: solution.worst_case_probs,
        curve_beta,
        curve_objective,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RobustCurveOut {
    epsilons: Vec<f64>,
    start_values: Vec<f64>,
    shortcut_q: Vec<f64>,
    detour_q: Vec<f64>,
    fork_takes_detour: Vec<bool>,
    switch_epsilon: Option<f64>,
}

/// Exact robust values of the chain across a budget grid: the start-state
/// value, both fork Q-values, and where the greedy fork action flips.
#[wasm_bindgen]
pub fn chain_robust_curve_json(
    slip_prob: f64,
    gamma: f64,
    eps_max: f64,
    points: usize,
) -> Result<String, JsError> {
    robust_curve(slip_prob, gamma, eps_max, points).map_err(|e| JsError::new(&e))
}

fn robust_curve(slip_prob: f64, gamma: f64, eps_max: f64, points: usize) -> Result<String, String> {
    if !(0.0..=0.5).contains(&slip_prob) {
        return Err("slip_prob must be in [0, 0.5]".into());
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err("gamma must be in [0, 1)".into());
    }
    if !(eps_max > 0.0) || !(2..=200).contains(&points) {
        return Err("need eps_max > 0 and 2..=200 points".into());
    }
    let env = ChainEnv::new(ChainConfig {
        slip_prob,
        gamma,
        ..ChainConfig::default()
    });
    let mdp = env.to_tabular();
    let mut out = RobustCurveOut {
        epsilons: Vec::with_capacity(points),
        start_values: Vec::with_capacity(points),
        shortcut_q: Vec::with_capacity(points),
        detour_q: Vec::with_capacity(points),
        fork_takes_detour: Vec::with_capacity(points),
        switch_epsilon: None,
    };
    for i in 0..points {
        let eps = eps_max * i as f64 / (points - 1) as f64;
        let solution =
            robust_value_iteration(&mdp, eps, 1e-9, 200_000).map_err(|e| e.to_string())?;
        let detour = solution.policy[FORK] == 0;
        if detour && out.switch_epsilon.is_none() {
            out.switch_epsilon = Some(eps);
        }
        out.epsilons.push(eps);
        out.start_values.push(solution.values[CORRIDOR]);
        out.detour_q.push(solution.q_values[FORK * 2]);
        out.shortcut_q.push(solution.q_values[FORK * 2 + 1]);
        out.fork_takes_detour.push(detour);
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CurriculumTraceOut {
    iterations: Vec<u64>,
    epsilon: Vec<f64>,
    beta_estimate: Vec<f64>,
    mean_return: Vec<f64>,
    robust_value_estimate: Vec<f64>,
    final_fork_takes_detour: bool,
}

/// Runs the tabular trainer on the chain under the named scheduler and
/// returns the training trace. Scheduler names: dr_spcrl, fixed, linear,
/// plateau, regret.
#[wasm_bindgen]
pub fn curriculum_trace_json(
    scheduler: &str,
    alpha: f64,
    lambda_curr: f64,
    iterations: usize,
    seed: u64,
) -> Result<String, JsError> {
    curriculum_trace(scheduler, alpha, lambda_curr, iterations, seed).map_err(|e| JsError::new(&e))
}

fn curriculum_trace(
    scheduler: &str,
    alpha: f64,
    lambda_curr: f64,
    iterations: usize,
    seed: u64,
) -> Result<String, String> {
    if !(1..=600).contains(&iterations) {
        return Err("iterations must be in 1..=600".into());
    }
    if alpha < 0.0 || lambda_curr <= 0.0 {
        return Err("need alpha >= 0 and lambda_curr > 0".into());
    }
    let scheduler_config = match scheduler {
        "dr_spcrl" => SchedulerConfig::DrSpcrl,
        "fixed" => SchedulerConfig::Fixed,
        "linear" => SchedulerConfig::Linear {
            eps_step: 0.01,
            start_iteration: 5,
        },
        "plateau" => SchedulerConfig::Plateau {
            interval: 5,
            start_iteration: 5,
            threshold: 0.1,
            window: 5,
            eps_step: 0.01,
        },
        "regret" => SchedulerConfig::RegretBuffer {
            buffer_size: 50,
            replay_prob: 0.8,
            edit_noise_std: 0.01,
            generator_range: 0.02,
            interval: 5,
        },
        other => return Err(format!("unknown scheduler '{other}'")),
    };
    let config = TrainConfig {
        total_iterations: iterations,
        rollout_steps: 256,
        num_minibatches: 4,
        policy_lr: 0.02,
        gamma: 0.7,
        ..TrainConfig::default()
    };
    let env = TrainEnv::Chain(ChainEnv::new(ChainConfig::default()));
    let curriculum = CurriculumState::new(0.0, 1.0, alpha, lambda_curr);
    let mut trainer = Trainer::new(
        config,
        env,
        curriculum,
        Scheduler::new(scheduler_config),
        seed,
    )
    .map_err(|e| e.to_string())?;

    let mut out = CurriculumTraceOut {
        iterations: Vec::with_capacity(iterations),
        epsilon: Vec::with_capacity(iterations),
        beta_estimate: Vec::with_capacity(iterations),
        mean_return: Vec::with_capacity(iterations),
        robust_value_estimate: Vec::with_capacity(iterations),
        final_fork_takes_detour: false,
    };
    for _ in 0..iterations {
        let row = trainer.train_iteration().map_err(|e| e.to_string())?;
        out.iterations.push(row.iteration);
        out.epsilon.push(row.epsilon);
        out.beta_estimate.push(row.beta_estimate);
        out.mean_return.push(row.mean_episode_return);
        out.robust_value_estimate.push(row.robust_value_estimate);
    }
    if let AgentState::Tabular(agent) = &trainer.agent {
        out.final_fork_takes_detour = agent.greedy_policy()[FORK] == 0;
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}
