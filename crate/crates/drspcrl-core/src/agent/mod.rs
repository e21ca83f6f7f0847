//! Actor-critic training with robust value targets and a learned dual
//! variable.
//!
//! One iteration follows the same block-coordinate scheme on both paths:
//! collect a rollout, take K gradient steps on the dual loss, compute robust
//! TD targets and advantages with the updated dual variable, update the
//! policy and critic, estimate the mean dual variable, and advance the
//! curriculum. The tabular path replaces the dual network with exact dual
//! solves on the known kernel; the function-approximation path estimates the
//! inner expectation from sampled branches.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::DualError;
use crate::env::EnvError;
use crate::tabular::MdpError;

pub mod ppo;
pub mod tabular;
pub mod trainer;

pub use trainer::{Checkpoint, Trainer};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error("training diverged at iteration {iteration}: {what}")]
    Diverged { what: String, iteration: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Training hyperparameters shared by both agent paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iterations: usize,
    /// Rollout steps per iteration.
    pub rollout_steps: usize,
    /// Gradient steps on the dual loss per iteration.
    pub dual_updates: usize,
    pub dual_lr: f64,
    pub policy_lr: f64,
    /// Clipped-surrogate range.
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Branch samples per step for the dual expectation (1 is exact under
    /// deterministic dynamics).
    pub branch_samples: usize,
    pub mini_epochs: usize,
    pub num_minibatches: usize,
    pub max_grad_norm: f64,
    pub vf_coef: f64,
    pub entropy_coef: f64,
    pub beta_floor: f64,
    pub hidden_dims: Vec<usize>,
    pub normalize_advantages: bool,
    pub clip_value_loss: bool,
    /// Iterations between checkpoints; 0 checkpoints only at the end.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 100,
            rollout_steps: 2048,
            dual_updates: 5,
            dual_lr: 5e-4,
            policy_lr: 3e-4,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            branch_samples: 1,
            mini_epochs: 10,
            num_minibatches: 32,
            max_grad_norm: 0.5,
            vf_coef: 0.5,
            entropy_coef: 0.0,
            beta_floor: 1e-3,
            hidden_dims: vec![64, 64],
            normalize_advantages: true,
            clip_value_loss: true,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.total_iterations == 0 || self.rollout_steps == 0 {
            return Err(AgentError::Config("iterations and rollout steps must be positive".into()));
        }
        if self.dual_updates == 0 {
            return Err(AgentError::Config("dual_updates must be at least 1".into()));
        }
        if self.dual_lr <= 0.0 || self.policy_lr <= 0.0 {
            return Err(AgentError::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AgentError::Config("gamma must be in [0, 1)".into()));
        }
        if self.branch_samples == 0 || self.mini_epochs == 0 || self.num_minibatches == 0 {
            return Err(AgentError::Config("batching parameters must be positive".into()));
        }
        if self.beta_floor <= 0.0 {
            return Err(AgentError::Config("beta_floor must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training metrics CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_episode_return: f64,
    pub robust_value_estimate: f64,
    pub epsilon: f64,
    pub beta_estimate: f64,
    pub policy_loss: f64,
    pub dual_loss: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "iteration,env_steps,mean_episode_return,robust_value_estimate,epsilon,beta_estimate,policy_loss,dual_loss";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_episode_return,
            self.robust_value_estimate,
            self.epsilon,
            self.beta_estimate,
            self.policy_loss,
            self.dual_loss
        )
    }
}

/// Robust dual value of a sampled branch support at a fixed dual variable:
///
/// ```text
/// -beta * log( (1/n) sum_j exp(-v_j / beta) ) - beta * eps
/// ```
///
/// stabilized at the branch minimum.
pub fn branch_dual_value(branch_values: &[f64], beta: f64, epsilon: f64) -> f64 {
    debug_assert!(beta > 0.0 && !branch_values.is_empty());
    let m = branch_values.iter().copied().fold(f64::INFINITY, f64::min);
    let n = branch_values.len() as f64;
    let sum: f64 = branch_values.iter().map(|v| (-(v - m) / beta).exp()).sum();
    m - beta * (sum / n).ln() - beta * epsilon
}

/// Derivative of [`branch_dual_value`] with respect to `beta`. Equals the KL
/// divergence between the tilted branch weights and the uniform weights,
/// minus the budget.
pub fn branch_dual_value_dbeta(branch_values: &[f64], beta: f64, epsilon: f64) -> f64 {
    let m = branch_values.iter().copied().fold(f64::INFINITY, f64::min);
    let n = branch_values.len() as f64;
    let exps: Vec<f64> = branch_values.iter().map(|v| (-(v - m) / beta).exp()).collect();
    let z: f64 = exps.iter().sum();
    let kl: f64 = exps
        .iter()
        .filter(|e| **e > 0.0)
        .map(|e| {
            let w = e / z;
            w * (n * w).ln()
        })
        .sum();
    kl.max(0.0) - epsilon
}

/// Robust TD target for one step:
/// `r + gamma * (1 - done) * branch_dual_value(V(s'_j), beta, eps)`.
///
/// With `eps = 0` and a single branch this is the ordinary TD target.
pub fn robust_target(
    branch_values: &[f64],
    beta: f64,
    epsilon: f64,
    reward: f64,
    done: bool,
    gamma: f64,
) -> f64 {
    if done {
        return reward;
    }
    reward + gamma * branch_dual_value(branch_values, beta, epsilon)
}

/// Generalized advantage estimation over robust TD residuals. `deltas[t]`
/// is `target_t - V(s_t)`; `dones[t]` cuts the recursion at episode ends.
pub fn gae_advantages(deltas: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let mut advantages = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        acc = deltas[t] + gamma * lambda * mask * acc;
        advantages[t] = acc;
    }
    advantages
}

/// Normalizes advantages to zero mean and unit variance across the batch.
/// Degenerate batches (near-zero spread) are left untouched.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len() as f64;
    if n < 2.0 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return;
    }
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Clipped-surrogate policy loss gradient coefficient for one sample.
///
/// Returns `d(-min(r A, clip(r) A)) / d log pi`, which is `-A r` inside the
/// trust region and zero once the clipped branch is active.
pub fn clip_surrogate_coeff(log_ratio: f64, advantage: f64, clip: f64) -> f64 {
    let ratio = log_ratio.exp();
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    let surr1 = ratio * advantage;
    let surr2 = clipped * advantage;
    if surr1 <= surr2 {
        -advantage * ratio
    } else {
        0.0
    }
}

/// Clipped value-loss gradient `d/dv 0.5 max((v-R)^2, (vc-R)^2)` where
/// `vc = v_old + clamp(v - v_old, -clip, clip)`.
pub fn value_loss_grad(v: f64, v_old: f64, ret: f64, clip: f64, use_clip: bool) -> (f64, f64) {
    let unclipped = (v - ret) * (v - ret);
    if !use_clip {
        return (0.5 * unclipped, v - ret);
    }
    let vc = v_old + (v - v_old).clamp(-clip, clip);
    let clipped = (vc - ret) * (vc - ret);
    if unclipped >= clipped {
        (0.5 * unclipped, v - ret)
    } else {
        let dvc = if (v - v_old).abs() < clip { 1.0 } else { 0.0 };
        (0.5 * clipped, (vc - ret) * dvc)
    }
}

/// Deterministic minibatch partition: a seeded shuffle of `0..n` split into
/// `k` nearly equal slices.
pub fn minibatch_partition(n: usize, k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let k = k.min(n).max(1);
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        out.push(indices[cursor..cursor + len].to_vec());
        cursor += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{dual_objective, ValueSupport};

    #[test]
    fn zero_budget_single_branch_is_the_plain_td_target() {
        let t = robust_target(&[2.5], 7.3, 0.0, 1.0, false, 0.9);
        assert!((t - (1.0 + 0.9 * 2.5)).abs() < 1e-12);
    }

    #[test]
    fn constant_branches_reduce_to_value_minus_beta_eps() {
        let t = robust_target(&[3.0, 3.0, 3.0], 2.0, 0.1, 0.5, false, 0.9);
        assert!((t - (0.5 + 0.9 * (3.0 - 2.0 * 0.1))).abs() < 1e-12);
    }

    #[test]
    fn terminal_steps_ignore_the_branch_values() {
        let t = robust_target(&[100.0], 1.0, 0.3, -0.25, true, 0.9);
        assert_eq!(t, -0.25);
    }

    #[test]
    fn branch_dual_value_matches_the_dual_objective_on_uniform_support() {
        let values = vec![0.3, -1.2, 0.9, 2.0];
        let uniform = ValueSupport::new(values.clone(), vec![0.25; 4]).unwrap();
        let beta = 1.0;
        let eps = 0.1;
        let lhs = branch_dual_value(&values, beta, eps);
        let rhs = dual_objective(beta, &uniform, eps).unwrap();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn branch_dual_derivative_matches_finite_differences() {
        let values = vec![0.3, -1.2, 0.9, 2.0];
        for beta in [0.3, 1.0, 5.0] {
            for eps in [0.0, 0.2] {
                let h = 1e-6;
                let fd = (branch_dual_value(&values, beta + h, eps)
                    - branch_dual_value(&values, beta - h, eps))
                    / (2.0 * h);
                let analytic = branch_dual_value_dbeta(&values, beta, eps);
                assert!(
                    (fd - analytic).abs() < 1e-6,
                    "beta {beta} eps {eps}: fd {fd} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn gae_reduces_to_deltas_at_lambda_zero_and_to_returns_at_lambda_one() {
        let deltas = vec![1.0, -0.5, 2.0];
        let dones = vec![false, false, true];
        let at_zero = gae_advantages(&deltas, &dones, 0.9, 0.0);
        assert_eq!(at_zero, deltas);

        let at_one = gae_advantages(&deltas, &dones, 1.0, 1.0);
        assert!((at_one[0] - (1.0 - 0.5 + 2.0)).abs() < 1e-12);
        assert!((at_one[1] - (-0.5 + 2.0)).abs() < 1e-12);
        assert!((at_one[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gae_stops_at_episode_boundaries() {
        let deltas = vec![1.0, 1.0, 1.0, 1.0];
        let dones = vec![false, true, false, false];
        let adv = gae_advantages(&deltas, &dones, 0.9, 0.95);
        // Step 1 is terminal: its advantage is its own delta, and step 0
        // bootstraps only through step 1.
        assert!((adv[1] - 1.0).abs() < 1e-12);
        assert!((adv[0] - (1.0 + 0.9 * 0.95 * 1.0)).abs() < 1e-12);
        assert!((adv[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn advantage_normalization_centers_and_scales() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);

        let mut zeros = vec![0.0; 4];
        normalize_advantages(&mut zeros);
        assert_eq!(zeros, vec![0.0; 4]);
    }

    #[test]
    fn surrogate_gradient_vanishes_when_the_clip_is_active() {
        // Positive advantage, ratio far above 1 + clip: clipped branch wins.
        assert_eq!(clip_surrogate_coeff(1.0, 2.0, 0.2), 0.0);
        // Inside the trust region the gradient pushes in the ascent direction.
        let c = clip_surrogate_coeff(0.0, 2.0, 0.2);
        assert!((c + 2.0).abs() < 1e-12);
        // Negative advantage with ratio below 1 - clip: also clipped away.
        assert_eq!(clip_surrogate_coeff(-1.0, -2.0, 0.2), 0.0);
    }

    #[test]
    fn value_loss_gradient_follows_the_worse_branch() {
        // Unclipped branch dominates.
        let (loss, grad) = value_loss_grad(2.0, 0.0, 0.0, 0.2, true);
        assert!((loss - 2.0).abs() < 1e-12);
        assert!((grad - 2.0).abs() < 1e-12);
        // Without clipping the gradient is plain (v - ret).
        let (_, g2) = value_loss_grad(2.0, 0.0, 0.0, 0.2, false);
        assert!((g2 - 2.0).abs() < 1e-12);
        // When v barely moved, the clipped branch tracks v.
        let (_, g3) = value_loss_grad(0.1, 0.0, 1.0, 0.2, true);
        assert!((g3 - (0.1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn minibatch_partition_covers_every_index_once() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let parts = minibatch_partition(103, 8, &mut rng);
        assert_eq!(parts.len(), 8);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }
}
