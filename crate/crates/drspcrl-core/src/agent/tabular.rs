//! Tabular softmax agent for the chain: exact dual solves, no networks.
//!
//! The policy is a softmax over per-state logits and the critic is a value
//! table. Robust TD targets come from the dual solver applied to the known
//! kernel rows, and the curriculum signal is the exact optimal dual variable
//! averaged over the visited state-action pairs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{solve_dual, DualSolverConfig};
use crate::env::{chain::ChainEnv, Action, Environment};
use crate::nn::{clip_grad_norm, Adam};
use crate::tabular::{TabularMdp, TabularPolicy};

use super::{
    clip_surrogate_coeff, gae_advantages, minibatch_partition, normalize_advantages,
    value_loss_grad, AgentError, TrainConfig,
};

/// Budget floor for the curriculum signal: the exact optimal dual variable
/// diverges as the budget approaches zero, so the estimate is taken at a
/// slightly positive budget when the curriculum sits at zero.
const BETA_ESTIMATE_EPS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularAgent {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flattened (s, a) policy logits.
    pub logits: Vec<f64>,
    /// State-value table.
    pub values: Vec<f64>,
    pub policy_opt: Adam,
    pub value_opt: Adam,
}

/// On-policy experience from one rollout.
pub struct TabularBatch {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub episode_returns: Vec<f64>,
}

/// Per-iteration statistics for the metrics CSV.
pub struct IterationStats {
    pub mean_episode_return: f64,
    pub robust_value_estimate: f64,
    pub beta_estimate: f64,
    pub policy_loss: f64,
    pub dual_loss: f64,
}

impl TabularAgent {
    pub fn new(n_states: usize, n_actions: usize, config: &TrainConfig) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
            values: vec![0.0; n_states],
            policy_opt: Adam::new(config.policy_lr, n_states * n_actions),
            value_opt: Adam::new(config.policy_lr, n_states),
        }
    }

    pub fn action_probs(&self, state: usize) -> Vec<f64> {
        let row = &self.logits[state * self.n_actions..][..self.n_actions];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn log_prob(&self, state: usize, action: usize) -> f64 {
        let row = &self.logits[state * self.n_actions..][..self.n_actions];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|l| (l - max).exp()).sum();
        row[action] - max - z.ln()
    }

    pub fn sample_action(&self, state: usize, rng: &mut ChaCha8Rng) -> (usize, f64) {
        let probs = self.action_probs(state);
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut action = self.n_actions - 1;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                action = a;
                break;
            }
        }
        (action, self.log_prob(state, action))
    }

    /// The trained policy as an exact stochastic table.
    pub fn stochastic_policy(&self) -> TabularPolicy {
        let mut table = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            table.extend(self.action_probs(s));
        }
        TabularPolicy::Stochastic(table)
    }

    /// Greedy policy, ties toward the lowest action index.
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let row = &self.logits[s * self.n_actions..][..self.n_actions];
                let mut best = 0;
                for (a, l) in row.iter().enumerate() {
                    if *l > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    pub fn collect(
        &self,
        env: &mut ChainEnv,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TabularBatch, AgentError> {
        let mut batch = TabularBatch {
            states: Vec::with_capacity(steps),
            actions: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps),
            dones: Vec::with_capacity(steps),
            log_probs: Vec::with_capacity(steps),
            episode_returns: Vec::new(),
        };
        env.reset(rng);
        let mut episode_return = 0.0;
        for _ in 0..steps {
            let state = env.state();
            let (action, log_prob) = self.sample_action(state, rng);
            let result = env.step(&Action::Discrete(action), rng)?;
            episode_return += result.reward;
            batch.states.push(state);
            batch.actions.push(action);
            batch.rewards.push(result.reward);
            batch.dones.push(result.done);
            batch.log_probs.push(log_prob);
            if result.done {
                batch.episode_returns.push(episode_return);
                episode_return = 0.0;
                env.reset(rng);
            }
        }
        Ok(batch)
    }

    /// One full training iteration at the current budget.
    pub fn iteration(
        &mut self,
        env: &mut ChainEnv,
        mdp: &TabularMdp,
        config: &TrainConfig,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<IterationStats, AgentError> {
        let batch = self.collect(env, config.rollout_steps, rng)?;
        let dual_config = DualSolverConfig::default();

        // Robust TD targets from exact dual solves on the known kernel.
        let mut targets = Vec::with_capacity(batch.states.len());
        let mut beta_sum = 0.0;
        let eps_for_beta = epsilon.max(BETA_ESTIMATE_EPS_FLOOR);
        for t in 0..batch.states.len() {
            let (s, a) = (batch.states[t], batch.actions[t]);
            let support = mdp.row_support(s, a, &self.values)?;
            let worst = solve_dual(&support, epsilon, &dual_config)?.robust_value;
            let target = if batch.dones[t] {
                batch.rewards[t]
            } else {
                batch.rewards[t] + config.gamma * worst
            };
            targets.push(target);
            beta_sum += solve_dual(&support, eps_for_beta, &dual_config)?.beta_star;
        }
        let beta_estimate = beta_sum / batch.states.len() as f64;
        let robust_value_estimate = targets.iter().sum::<f64>() / targets.len() as f64;
        // L(phi) = -V_robust; with exact solves this is just the mean
        // negative robust target.
        let dual_loss = -robust_value_estimate;

        let v_old: Vec<f64> = batch.states.iter().map(|s| self.values[*s]).collect();
        let deltas: Vec<f64> = targets
            .iter()
            .zip(&v_old)
            .map(|(target, v)| target - v)
            .collect();
        let mut advantages = gae_advantages(&deltas, &batch.dones, config.gamma, config.gae_lambda);
        let returns: Vec<f64> = advantages.iter().zip(&v_old).map(|(a, v)| a + v).collect();
        if config.normalize_advantages {
            normalize_advantages(&mut advantages);
        }

        let mut policy_loss_last = 0.0;
        for _ in 0..config.mini_epochs {
            for part in minibatch_partition(batch.states.len(), config.num_minibatches, rng) {
                let scale = 1.0 / part.len() as f64;
                let mut grad_logits = vec![0.0; self.logits.len()];
                let mut grad_values = vec![0.0; self.values.len()];
                let mut loss_acc = 0.0;
                for &t in &part {
                    let (s, a) = (batch.states[t], batch.actions[t]);
                    let log_ratio = self.log_prob(s, a) - batch.log_probs[t];
                    let coeff = clip_surrogate_coeff(log_ratio, advantages[t], config.clip) * scale;
                    let ratio = log_ratio.exp();
                    loss_acc += -(ratio * advantages[t])
                        .min(ratio.clamp(1.0 - config.clip, 1.0 + config.clip) * advantages[t])
                        * scale;
                    // d log pi / d logits = onehot(a) - softmax(s)
                    let probs = self.action_probs(s);
                    for b in 0..self.n_actions {
                        let indicator = if b == a { 1.0 } else { 0.0 };
                        grad_logits[s * self.n_actions + b] += coeff * (indicator - probs[b]);
                    }
                    let (_, vgrad) = value_loss_grad(
                        self.values[s],
                        v_old[t],
                        returns[t],
                        config.clip,
                        config.clip_value_loss,
                    );
                    grad_values[s] += config.vf_coef * vgrad * scale;
                }
                if !loss_acc.is_finite() {
                    return Err(AgentError::Diverged {
                        what: format!("tabular policy loss became {loss_acc}"),
                        iteration: 0,
                    });
                }
                clip_grad_norm(&mut grad_logits, config.max_grad_norm);
                clip_grad_norm(&mut grad_values, config.max_grad_norm);
                self.policy_opt.step(&mut self.logits, &grad_logits);
                self.value_opt.step(&mut self.values, &grad_values);
                policy_loss_last = loss_acc;
            }
        }

        let mean_episode_return = if batch.episode_returns.is_empty() {
            0.0
        } else {
            batch.episode_returns.iter().sum::<f64>() / batch.episode_returns.len() as f64
        };
        Ok(IterationStats {
            mean_episode_return,
            robust_value_estimate,
            beta_estimate,
            policy_loss: policy_loss_last,
            dual_loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::chain::{ChainConfig, FORK, RIGHT};
    use crate::tabular::robust_value_iteration;
    use rand::SeedableRng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            rollout_steps: 256,
            num_minibatches: 4,
            policy_lr: 0.02,
            gamma: 0.7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn softmax_policy_starts_uniform_and_samples_deterministically() {
        let agent = TabularAgent::new(7, 2, &TrainConfig::default());
        assert_eq!(agent.action_probs(3), vec![0.5, 0.5]);
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(agent.sample_action(2, &mut r1), agent.sample_action(2, &mut r2));
    }

    #[test]
    fn rollout_is_reproducible_given_the_seed() {
        let agent = TabularAgent::new(7, 2, &TrainConfig::default());
        let mut env = ChainEnv::new(ChainConfig::default());
        let collect = |env: &mut ChainEnv, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = agent.collect(env, 64, &mut rng).unwrap();
            (b.states, b.rewards)
        };
        assert_eq!(collect(&mut env, 7), collect(&mut env, 7));
    }

    #[test]
    fn vanilla_training_recovers_the_nominal_greedy_policy() {
        // 500 iterations at zero budget converge to the nominal optimum.
        let config = small_config();
        let env_config = ChainConfig::default();
        let mut env = ChainEnv::new(env_config.clone());
        let mdp = env.to_tabular();
        let mut agent = TabularAgent::new(7, 2, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            agent.iteration(&mut env, &mdp, &config, 0.0, &mut rng).unwrap();
        }
        let greedy = agent.greedy_policy();
        let optimal = robust_value_iteration(&mdp, 0.0, 1e-10, 100_000).unwrap();
        // Compare on the states the optimal policy actually visits.
        for s in [2, FORK, 4] {
            assert_eq!(greedy[s], optimal.policy[s], "state {s}");
        }
        assert_eq!(greedy[FORK], RIGHT, "nominal training must take the shortcut");
    }

    #[test]
    fn curriculum_pressure_flips_the_fork_action() {
        // Training at the full budget prefers the deterministic detour.
        let config = small_config();
        let mut env = ChainEnv::new(ChainConfig::default());
        let mdp = env.to_tabular();
        let mut agent = TabularAgent::new(7, 2, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            agent.iteration(&mut env, &mdp, &config, 1.0, &mut rng).unwrap();
        }
        assert_eq!(agent.greedy_policy()[FORK], crate::env::chain::LEFT);
    }

    #[test]
    fn beta_estimate_is_finite_and_nonnegative_at_zero_budget() {
        let config = small_config();
        let mut env = ChainEnv::new(ChainConfig::default());
        let mdp = env.to_tabular();
        let mut agent = TabularAgent::new(7, 2, &config);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stats = agent.iteration(&mut env, &mdp, &config, 0.0, &mut rng).unwrap();
        assert!(stats.beta_estimate.is_finite());
        assert!(stats.beta_estimate >= 0.0);
        assert!(stats.beta_estimate < 1e3, "estimate {}", stats.beta_estimate);
    }
}
