//! Experiment configuration: one TOML file describes a full run.
//!
//! Unknown keys are rejected so a typo cannot silently fall back to a
//! default. The committed example configs double as the format reference.

use serde::{Deserialize, Serialize};

use crate::agent::trainer::TrainEnv;
use crate::agent::{AgentError, TrainConfig, Trainer};
use crate::curriculum::{CurriculumState, Scheduler, SchedulerConfig};
use crate::env::{ChainConfig, ChainEnv, PendulumConfig, PendulumEnv};
use crate::eval::PerturbationSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub agent: TrainConfig,
    #[serde(default)]
    pub curriculum: CurriculumSection,
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSection {
    Chain(ChainConfig),
    Pendulum(PendulumConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub epsilon_start: f64,
    pub epsilon_budget: f64,
    /// Pacing weight of the quadratic pull toward the budget.
    pub alpha: f64,
    /// Effective curriculum learning rate.
    pub lambda_curr: f64,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            epsilon_start: 0.0,
            epsilon_budget: 1.0,
            alpha: 0.5,
            lambda_curr: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub episodes: usize,
    /// Discount applied to evaluation returns; omit to reuse the agent's
    /// discount (which makes chain evaluations comparable to the exact
    /// tabular values).
    pub discount: Option<f64>,
    pub specs: Vec<PerturbationSpec>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        use crate::eval::PerturbationKind;
        let levels = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        Self {
            episodes: 100,
            discount: None,
            specs: vec![
                PerturbationSpec {
                    kind: PerturbationKind::Observation,
                    levels: levels.clone(),
                },
                PerturbationSpec {
                    kind: PerturbationKind::Action,
                    levels: levels.clone(),
                },
                PerturbationSpec {
                    kind: PerturbationKind::Environment,
                    levels,
                },
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, AgentError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| AgentError::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String, AgentError> {
        toml::to_string_pretty(self).map_err(|e| AgentError::Config(format!("config encode: {e}")))
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.agent.validate()?;
        self.scheduler
            .validate()
            .map_err(AgentError::Config)?;
        let c = &self.curriculum;
        if c.epsilon_budget <= 0.0 {
            return Err(AgentError::Config("epsilon_budget must be positive".into()));
        }
        if !(0.0..=c.epsilon_budget).contains(&c.epsilon_start) {
            return Err(AgentError::Config(
                "epsilon_start must lie in [0, epsilon_budget]".into(),
            ));
        }
        if c.alpha < 0.0 || c.lambda_curr <= 0.0 {
            return Err(AgentError::Config(
                "alpha must be non-negative and lambda_curr positive".into(),
            ));
        }
        if self.evaluation.episodes < 2 {
            return Err(AgentError::Config("evaluation needs at least 2 episodes".into()));
        }
        for spec in &self.evaluation.specs {
            if spec.levels.is_empty() {
                return Err(AgentError::Config("perturbation level list is empty".into()));
            }
            for &level in &spec.levels {
                spec.kind
                    .validate_level(level)
                    .map_err(|e| AgentError::Config(e.to_string()))?;
            }
        }
        match &self.environment {
            EnvironmentSection::Chain(c) => {
                if !(0.0..=0.5).contains(&c.slip_prob) {
                    return Err(AgentError::Config("chain slip_prob must be in [0, 0.5]".into()));
                }
                if !(0.0..1.0).contains(&c.gamma) {
                    return Err(AgentError::Config("chain gamma must be in [0, 1)".into()));
                }
                if c.start_state >= crate::env::chain::N_STATES {
                    return Err(AgentError::Config("chain start_state out of range".into()));
                }
            }
            EnvironmentSection::Pendulum(p) => {
                if p.mass <= 0.0 || p.length <= 0.0 || p.gravity <= 0.0 || p.dt <= 0.0 {
                    return Err(AgentError::Config(
                        "pendulum physical parameters must be positive".into(),
                    ));
                }
                if p.damping < 0.0 {
                    return Err(AgentError::Config("pendulum damping must be non-negative".into()));
                }
            }
        }
        Ok(())
    }

    pub fn build_env(&self) -> TrainEnv {
        match &self.environment {
            EnvironmentSection::Chain(c) => TrainEnv::Chain(ChainEnv::new(c.clone())),
            EnvironmentSection::Pendulum(p) => TrainEnv::Pendulum(PendulumEnv::new(p.clone())),
        }
    }

    /// Discount used for evaluation returns.
    pub fn eval_discount(&self) -> f64 {
        self.evaluation.discount.unwrap_or(self.agent.gamma)
    }

    /// Builds a fresh trainer; `seed_override` replaces the configured
    /// master seed (the command-line `--seed` flag).
    pub fn build_trainer(&self, seed_override: Option<u64>) -> Result<Trainer, AgentError> {
        let seed = seed_override.unwrap_or(self.experiment.master_seed);
        let c = &self.curriculum;
        let curriculum =
            CurriculumState::new(c.epsilon_start, c.epsilon_budget, c.alpha, c.lambda_curr);
        Trainer::new(
            self.agent.clone(),
            self.build_env(),
            curriculum,
            Scheduler::new(self.scheduler.clone()),
            seed,
        )
    }
}
