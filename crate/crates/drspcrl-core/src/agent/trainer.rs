//! Training loop: rollouts, dual updates, curriculum advance, checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::{CurriculumState, Scheduler};
use crate::dual::{solve_dual, DualSolverConfig, ValueSupport};
use crate::env::{chain::ChainEnv, pendulum::PendulumEnv, Environment};
use crate::tabular::TabularMdp;

use super::ppo::PpoAgent;
use super::tabular::TabularAgent;
use super::{AgentError, MetricsRow, TrainConfig};

/// Budget floor used when scoring candidate budgets for the regret
/// scheduler; matches the floor of the tabular beta estimate.
const REGRET_EPS_FLOOR: f64 = 1e-3;

/// Environment owned by a trainer. Training always runs on the nominal
/// physics; perturbations live in the evaluation harness.
pub enum TrainEnv {
    Chain(ChainEnv),
    Pendulum(PendulumEnv),
}

impl TrainEnv {
    pub fn as_env_mut(&mut self) -> &mut dyn Environment {
        match self {
            TrainEnv::Chain(e) => e,
            TrainEnv::Pendulum(e) => e,
        }
    }

    pub fn as_env(&self) -> &dyn Environment {
        match self {
            TrainEnv::Chain(e) => e,
            TrainEnv::Pendulum(e) => e,
        }
    }
}

/// Trainable agent state; serialized wholesale into checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentState {
    Tabular(TabularAgent),
    Ppo(PpoAgent),
}

/// Everything needed to resume a run exactly: parameters, optimizer moments,
/// curriculum, scheduler internals and the random-stream position. Plain
/// JSON on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: u64,
    pub env_steps: u64,
    pub agent: AgentState,
    pub curriculum: CurriculumState,
    pub scheduler: Scheduler,
    pub robust_value_history: Vec<f64>,
    pub master_seed: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Trainer {
    pub config: TrainConfig,
    pub env: TrainEnv,
    pub agent: AgentState,
    pub curriculum: CurriculumState,
    pub scheduler: Scheduler,
    pub robust_value_history: Vec<f64>,
    pub iteration: u64,
    pub env_steps: u64,
    master_seed: u64,
    rng: ChaCha8Rng,
    /// Exact MDP view of the chain environment, for dual solves.
    chain_mdp: Option<TabularMdp>,
    /// Branch values of the most recent rollout (function-approximation
    /// path), kept for regret scoring.
    last_branch_values: Vec<Vec<f64>>,
    /// Visited state-action pairs of the most recent rollout (tabular path).
    last_visits: Vec<(usize, usize)>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        env: TrainEnv,
        curriculum: CurriculumState,
        scheduler: Scheduler,
        master_seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        let (agent, chain_mdp) = match &env {
            TrainEnv::Chain(chain) => {
                let mdp = chain.to_tabular();
                let agent = TabularAgent::new(mdp.n_states(), mdp.n_actions(), &config);
                (AgentState::Tabular(agent), Some(mdp))
            }
            TrainEnv::Pendulum(pend) => {
                let obs_dim = pend.observation_dim();
                let agent = PpoAgent::new(obs_dim, 1, &config, &mut rng);
                (AgentState::Ppo(agent), None)
            }
        };
        Ok(Self {
            config,
            env,
            agent,
            curriculum,
            scheduler,
            robust_value_history: Vec::new(),
            iteration: 0,
            env_steps: 0,
            master_seed,
            rng,
            chain_mdp,
            last_branch_values: Vec::new(),
            last_visits: Vec::new(),
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Runs one iteration of the training loop and returns its metrics row.
    /// The recorded epsilon is the curriculum position after the update, so
    /// the trace matches the curriculum history.
    pub fn train_iteration(&mut self) -> Result<MetricsRow, AgentError> {
        let iteration = self.iteration + 1;
        let epsilon = self.curriculum.epsilon_t;
        let stats = match (&mut self.agent, &mut self.env) {
            (AgentState::Tabular(agent), TrainEnv::Chain(chain)) => {
                let mdp = self.chain_mdp.as_ref().expect("chain trainer has its mdp");
                agent.iteration(chain, mdp, &self.config, epsilon, &mut self.rng)?
            }
            (AgentState::Ppo(agent), env) => {
                let s = agent.iteration(
                    env.as_env_mut(),
                    &self.config,
                    epsilon,
                    iteration,
                    &mut self.rng,
                )?;
                self.last_branch_values = s.branch_values;
                super::tabular::IterationStats {
                    mean_episode_return: s.mean_episode_return,
                    robust_value_estimate: s.robust_value_estimate,
                    beta_estimate: s.beta_estimate,
                    policy_loss: s.policy_loss,
                    dual_loss: s.dual_loss,
                }
            }
            (AgentState::Tabular(_), TrainEnv::Pendulum(_)) => {
                return Err(AgentError::Config(
                    "the tabular agent requires the chain environment".into(),
                ))
            }
        };
        self.refresh_regret_inputs()?;
        self.robust_value_history.push(stats.robust_value_estimate);

        let scorer = RegretScorer {
            chain_mdp: self.chain_mdp.as_ref(),
            agent: &self.agent,
            visits: &self.last_visits,
            branch_values: &self.last_branch_values,
        };
        self.scheduler.advance(
            &mut self.curriculum,
            iteration,
            stats.beta_estimate,
            &self.robust_value_history,
            &mut self.rng,
            |eps| scorer.score(eps),
        );

        self.iteration = iteration;
        self.env_steps += self.config.rollout_steps as u64;
        Ok(MetricsRow {
            iteration,
            env_steps: self.env_steps,
            mean_episode_return: stats.mean_episode_return,
            robust_value_estimate: stats.robust_value_estimate,
            epsilon: self.curriculum.epsilon_t,
            beta_estimate: stats.beta_estimate,
            policy_loss: stats.policy_loss,
            dual_loss: stats.dual_loss,
        })
    }

    /// Rebuilds the data the regret scorer draws on. For the tabular path a
    /// fresh off-to-the-side rollout is unnecessary: the visited pairs are
    /// whatever the value table covers, so every state-action pair of the
    /// small chain is scored.
    fn refresh_regret_inputs(&mut self) -> Result<(), AgentError> {
        match &self.agent {
            AgentState::Tabular(_) => {
                if let Some(mdp) = &self.chain_mdp {
                    self.last_visits = (0..mdp.n_states())
                        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
                        .collect();
                }
            }
            AgentState::Ppo(_) => {
                // Branch values were captured from the iteration itself.
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            env_steps: self.env_steps,
            agent: self.agent.clone(),
            curriculum: self.curriculum.clone(),
            scheduler: self.scheduler.clone(),
            robust_value_history: self.robust_value_history.clone(),
            master_seed: self.master_seed,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    /// Restores a trainer from a checkpoint onto a freshly built environment
    /// of the same kind. Iterations always begin with an episode reset, so
    /// the resumed stream continues the interrupted run exactly.
    pub fn from_checkpoint(
        checkpoint: Checkpoint,
        config: TrainConfig,
        env: TrainEnv,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(AgentError::Config(format!(
                "unsupported checkpoint version {}",
                checkpoint.version
            )));
        }
        let chain_mdp = match &env {
            TrainEnv::Chain(chain) => Some(chain.to_tabular()),
            TrainEnv::Pendulum(_) => None,
        };
        match (&checkpoint.agent, &env) {
            (AgentState::Tabular(_), TrainEnv::Chain(_)) => {}
            (AgentState::Ppo(_), TrainEnv::Pendulum(_)) => {}
            _ => {
                return Err(AgentError::Config(
                    "checkpoint agent kind does not match the environment".into(),
                ))
            }
        }
        let mut rng = ChaCha8Rng::from_seed(checkpoint.rng_seed);
        rng.set_word_pos(checkpoint.rng_word_pos);
        Ok(Self {
            config,
            env,
            agent: checkpoint.agent,
            curriculum: checkpoint.curriculum,
            scheduler: checkpoint.scheduler,
            robust_value_history: checkpoint.robust_value_history,
            iteration: checkpoint.iteration,
            env_steps: checkpoint.env_steps,
            master_seed: checkpoint.master_seed,
            rng,
            chain_mdp,
            last_branch_values: Vec::new(),
            last_visits: Vec::new(),
        })
    }
}

/// Scores a candidate budget by the mean optimal dual variable it would
/// induce on the most recent experience.
struct RegretScorer<'a> {
    chain_mdp: Option<&'a TabularMdp>,
    agent: &'a AgentState,
    visits: &'a [(usize, usize)],
    branch_values: &'a [Vec<f64>],
}

impl RegretScorer<'_> {
    fn score(&self, epsilon: f64) -> f64 {
        let eps = epsilon.max(REGRET_EPS_FLOOR);
        let config = DualSolverConfig::default();
        match self.agent {
            AgentState::Tabular(agent) => {
                let Some(mdp) = self.chain_mdp else { return 0.0 };
                let mut sum = 0.0;
                let mut count = 0usize;
                for &(s, a) in self.visits {
                    if let Ok(support) = mdp.row_support(s, a, &agent.values) {
                        if let Ok(sol) = solve_dual(&support, eps, &config) {
                            sum += sol.beta_star;
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    0.0
                } else {
                    sum / count as f64
                }
            }
            AgentState::Ppo(agent) => {
                if self.branch_values.is_empty() {
                    // Without fresh branches, the network mean over nothing
                    // is undefined; report the floor output.
                    return agent.dual.beta_floor;
                }
                let mut sum = 0.0;
                let mut count = 0usize;
                for values in self.branch_values {
                    let n = values.len();
                    if let Ok(support) = ValueSupport::new(values.clone(), vec![1.0 / n as f64; n]) {
                        if let Ok(sol) = solve_dual(&support, eps, &config) {
                            sum += sol.beta_star;
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    agent.dual.beta_floor
                } else {
                    sum / count as f64
                }
            }
        }
    }
}
