//! Schedulers for the robustness budget.
//!
//! The self-paced update treats the dual variable as the marginal cost of
//! robustness and descends the curriculum objective:
//!
//! ```text
//! eps_{t+1} = clamp( eps_t - lambda_curr * (beta + 2 alpha (eps_t - eps_budget)),
//!                    0, eps_budget )
//! ```
//!
//! With `beta = 0` the unique fixed point is the target budget; a persistent
//! dual signal `b` stalls the curriculum at `max(0, eps_budget - b / (2 alpha))`.
//! Four baselines sit behind the same interface: a fixed budget, a linear
//! ramp, a plateau trigger on the robust value, and a regret-scored replay
//! buffer with edit noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One recorded curriculum step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub epsilon: f64,
    pub beta_estimate: f64,
}

/// Mutable curriculum state shared by every scheduler variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epsilon_t: f64,
    pub epsilon_budget: f64,
    /// Pacing weight pulling the budget toward the target.
    pub alpha: f64,
    /// Effective curriculum learning rate.
    pub lambda_curr: f64,
    pub epsilon_start: f64,
    pub step_count: u64,
    pub history: Vec<HistoryEntry>,
}

impl CurriculumState {
    pub fn new(epsilon_start: f64, epsilon_budget: f64, alpha: f64, lambda_curr: f64) -> Self {
        let epsilon_start = epsilon_start.clamp(0.0, epsilon_budget);
        Self {
            epsilon_t: epsilon_start,
            epsilon_budget,
            alpha,
            lambda_curr,
            epsilon_start,
            step_count: 0,
            history: Vec::new(),
        }
    }

    /// Defaults: start at zero, budget one, alpha 0.5, learning rate 0.01.
    pub fn with_defaults() -> Self {
        Self::new(0.0, 1.0, 0.5, 0.01)
    }

    fn clamp_epsilon(&mut self) {
        self.epsilon_t = self.epsilon_t.clamp(0.0, self.epsilon_budget);
    }

    fn record(&mut self, beta_estimate: f64) {
        self.step_count += 1;
        self.history.push(HistoryEntry {
            step: self.step_count,
            epsilon: self.epsilon_t,
            beta_estimate,
        });
    }
}

/// Scheduler variant and its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SchedulerConfig {
    /// Self-paced update driven by the estimated dual variable.
    DrSpcrl,
    /// Budget held at `epsilon_budget` from the first step.
    Fixed,
    /// Linear ramp: `eps_step` per curriculum step once `start_iteration`
    /// is reached. A zero step holds the budget at `epsilon_start`.
    Linear { eps_step: f64, start_iteration: u64 },
    /// Raise the budget only when the robust value has plateaued.
    Plateau {
        interval: u64,
        start_iteration: u64,
        threshold: f64,
        window: usize,
        eps_step: f64,
    },
    /// Replay buffer of budgets scored by regret (mean dual variable).
    RegretBuffer {
        buffer_size: usize,
        replay_prob: f64,
        edit_noise_std: f64,
        generator_range: f64,
        interval: u64,
    },
}

impl SchedulerConfig {
    pub fn linear_defaults() -> Self {
        SchedulerConfig::Linear {
            eps_step: 0.01,
            start_iteration: 5,
        }
    }

    pub fn plateau_defaults() -> Self {
        SchedulerConfig::Plateau {
            interval: 10,
            start_iteration: 5,
            threshold: 0.1,
            window: 10,
            eps_step: 0.01,
        }
    }

    pub fn regret_defaults() -> Self {
        SchedulerConfig::RegretBuffer {
            buffer_size: 50,
            replay_prob: 0.8,
            edit_noise_std: 0.01,
            generator_range: 0.02,
            interval: 100,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            SchedulerConfig::Linear { eps_step, .. } => {
                if *eps_step < 0.0 {
                    return Err("linear eps_step must be non-negative".into());
                }
            }
            SchedulerConfig::Plateau {
                interval,
                threshold,
                window,
                eps_step,
                ..
            } => {
                if *interval == 0 || *window == 0 {
                    return Err("plateau interval and window must be positive".into());
                }
                if *threshold < 0.0 || *eps_step < 0.0 {
                    return Err("plateau threshold and eps_step must be non-negative".into());
                }
            }
            SchedulerConfig::RegretBuffer {
                buffer_size,
                replay_prob,
                edit_noise_std,
                generator_range,
                interval,
            } => {
                if *buffer_size == 0 || *interval == 0 {
                    return Err("regret buffer size and interval must be positive".into());
                }
                if !(0.0..=1.0).contains(replay_prob) {
                    return Err("replay_prob must be in [0, 1]".into());
                }
                if *edit_noise_std < 0.0 || *generator_range < 0.0 {
                    return Err("regret noise parameters must be non-negative".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// The self-paced update rule. Clamps into `[0, epsilon_budget]` and appends
/// to the history.
pub fn drspcrl_step(state: &mut CurriculumState, beta_estimate: f64) {
    let beta = beta_estimate.max(0.0);
    let gradient = beta + 2.0 * state.alpha * (state.epsilon_t - state.epsilon_budget);
    state.epsilon_t -= state.lambda_curr * gradient;
    state.clamp_epsilon();
    state.record(beta);
}

/// Linear ramp step. Before `start_iteration` the budget is unchanged.
pub fn linear_step(state: &mut CurriculumState, iteration: u64, eps_step: f64, start_iteration: u64) {
    if iteration >= start_iteration {
        state.epsilon_t += eps_step;
        state.clamp_epsilon();
    }
}

/// Plateau step: raise the budget by `eps_step` when the windowed mean of
/// the robust value stopped improving. With fewer than two full windows of
/// history the budget holds.
pub fn plateau_step(
    state: &mut CurriculumState,
    robust_value_history: &[f64],
    threshold: f64,
    window: usize,
    eps_step: f64,
) {
    if robust_value_history.len() < 2 * window {
        return;
    }
    let recent = &robust_value_history[robust_value_history.len() - window..];
    let previous =
        &robust_value_history[robust_value_history.len() - 2 * window..robust_value_history.len() - window];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let recent_mean = mean(recent);
    let previous_mean = mean(previous);
    let improvement = (recent_mean - previous_mean) / previous_mean.abs().max(1e-12);
    if improvement < threshold {
        state.epsilon_t += eps_step;
        state.clamp_epsilon();
    }
}

/// Entry of the regret replay buffer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegretEntry {
    pub epsilon: f64,
    pub score: f64,
}

/// Regret-buffer step. With probability `replay_prob` the highest-regret
/// budget is replayed with Gaussian edit noise; otherwise a fresh budget is
/// generated uniformly within `generator_range` of the current one. The
/// candidate is scored and inserted, evicting the lowest-regret entry when
/// the buffer is full.
#[allow(clippy::too_many_arguments)]
pub fn regret_step(
    state: &mut CurriculumState,
    buffer: &mut Vec<RegretEntry>,
    buffer_size: usize,
    replay_prob: f64,
    edit_noise_std: f64,
    generator_range: f64,
    rng: &mut ChaCha8Rng,
    regret_score: impl FnOnce(f64) -> f64,
) {
    let replay = rng.random::<f64>() < replay_prob;
    let candidate = if replay && !buffer.is_empty() {
        let best = buffer
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.score.total_cmp(&b.score))
            .map(|(i, _)| i)
            .expect("non-empty buffer");
        let noise = if edit_noise_std > 0.0 {
            Normal::new(0.0, edit_noise_std).expect("valid std").sample(rng)
        } else {
            0.0
        };
        buffer[best].epsilon + noise
    } else {
        state.epsilon_t + rng.random_range(-generator_range..=generator_range)
    };
    let candidate = candidate.clamp(0.0, state.epsilon_budget);
    let score = regret_score(candidate).max(0.0);
    if buffer.len() >= buffer_size {
        if let Some(worst) = buffer
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.score.total_cmp(&b.score))
            .map(|(i, _)| i)
        {
            buffer.remove(worst);
        }
    }
    buffer.push(RegretEntry {
        epsilon: candidate,
        score,
    });
    state.epsilon_t = candidate;
}

/// Stateful dispatcher over the scheduler variants. Owns the regret buffer
/// so `CurriculumState` stays variant-agnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub regret_buffer: Vec<RegretEntry>,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        Self {
            config,
            regret_buffer: Vec::new(),
        }
    }

    /// Advances the curriculum for training iteration `iteration` (counted
    /// from 1). Variants with a cadence only act on their own iterations;
    /// every call records a history entry so the trace stays aligned with
    /// the training loop.
    #[allow(clippy::too_many_arguments)]
    pub fn advance(
        &mut self,
        state: &mut CurriculumState,
        iteration: u64,
        beta_estimate: f64,
        robust_value_history: &[f64],
        rng: &mut ChaCha8Rng,
        regret_score: impl FnOnce(f64) -> f64,
    ) {
        match &self.config {
            SchedulerConfig::DrSpcrl => {
                drspcrl_step(state, beta_estimate);
                return; // drspcrl_step records its own history entry
            }
            SchedulerConfig::Fixed => {
                state.epsilon_t = state.epsilon_budget;
            }
            SchedulerConfig::Linear {
                eps_step,
                start_iteration,
            } => {
                linear_step(state, iteration, *eps_step, *start_iteration);
            }
            SchedulerConfig::Plateau {
                interval,
                start_iteration,
                threshold,
                window,
                eps_step,
            } => {
                if iteration >= *start_iteration && (iteration - start_iteration) % interval == 0 {
                    plateau_step(state, robust_value_history, *threshold, *window, *eps_step);
                }
            }
            SchedulerConfig::RegretBuffer {
                buffer_size,
                replay_prob,
                edit_noise_std,
                generator_range,
                interval,
            } => {
                if iteration % interval == 0 {
                    let (buffer_size, replay_prob, edit_noise_std, generator_range) =
                        (*buffer_size, *replay_prob, *edit_noise_std, *generator_range);
                    regret_step(
                        state,
                        &mut self.regret_buffer,
                        buffer_size,
                        replay_prob,
                        edit_noise_std,
                        generator_range,
                        rng,
                        regret_score,
                    );
                }
            }
        }
        state.record(beta_estimate);
    }
}
