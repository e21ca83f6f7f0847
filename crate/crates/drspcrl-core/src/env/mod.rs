//! Desk-scale environments with parameterized physics and branch sampling.
//!
//! Both environments expose snapshot/restore so the trainer can draw several
//! independent successor states from one decision point, which is how the
//! expectation inside the dual robust value is estimated from samples.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod chain;
pub mod pendulum;

pub use chain::{ChainConfig, ChainEnv};
pub use pendulum::{PendulumConfig, PendulumEnv};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action out of range: {0}")]
    ActionOutOfRange(String),
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("snapshot does not belong to this environment")]
    InvalidSnapshot,
    #[error("physics scale must be positive: {0}")]
    InvalidScale(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// An action in either a discrete or a box action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Declared action space of an environment.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Uniform draw over the space, used by the action-noise perturbation.
    pub fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> Action {
        match self {
            ActionSpace::Discrete(n) => Action::Discrete(rng.random_range(0..*n)),
            ActionSpace::Box { low, high } => Action::Continuous(
                low.iter()
                    .zip(high)
                    .map(|(l, h)| rng.random_range(*l..=*h))
                    .collect(),
            ),
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Opaque full simulator state: positions, velocities, step counter and the
/// active physics. Restoring it and replaying the same actions under the
/// same noise stream reproduces the identical trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSnapshot(pub(crate) SnapshotData);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) enum SnapshotData {
    Chain {
        state: usize,
        steps: u32,
        done: bool,
        slip_prob: f64,
    },
    Pendulum {
        theta: f64,
        theta_dot: f64,
        steps: u32,
        done: bool,
        mass: f64,
        length: f64,
        damping: f64,
        gravity: f64,
    },
}

/// Named physical parameters of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhysicsParams {
    Pendulum {
        mass: f64,
        length: f64,
        damping: f64,
        gravity: f64,
    },
    Chain {
        slip_prob: f64,
    },
}

impl PhysicsParams {
    /// The parameters subject to domain perturbation, in the order expected
    /// by `apply_physics_scale`: pendulum {mass, length, damping} (gravity is
    /// held fixed), chain {slip_prob}.
    pub fn perturbable(&self) -> Vec<f64> {
        match self {
            PhysicsParams::Pendulum {
                mass,
                length,
                damping,
                ..
            } => vec![*mass, *length, *damping],
            PhysicsParams::Chain { slip_prob } => vec![*slip_prob],
        }
    }
}

pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Resets to a fresh episode and returns the initial observation.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Advances one step. The random stream drives any stochastic dynamics.
    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError>;
    fn snapshot(&self) -> EnvSnapshot;
    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError>;
    /// Active physics (after any perturbation).
    fn physics(&self) -> PhysicsParams;
    /// Nominal physics the environment was built with.
    fn nominal_physics(&self) -> PhysicsParams;
    /// Rescales the perturbable parameters relative to the nominal ones, so
    /// repeated perturbations never compound.
    fn apply_physics_scale(&mut self, scales: &[f64]) -> Result<(), EnvError>;
}

/// Draws `n` independent successor states for `action` from `snapshot` by
/// restoring it once per draw under a distinct sub-seed. The environment is
/// left restored to the snapshot afterwards.
pub fn branch_sample(
    env: &mut dyn Environment,
    snapshot: &EnvSnapshot,
    action: &Action,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepResult>, EnvError> {
    let mut results = Vec::with_capacity(n);
    for _ in 0..n {
        env.restore(snapshot)?;
        let mut branch_rng = ChaCha8Rng::seed_from_u64(rng.random::<u64>());
        results.push(env.step(action, &mut branch_rng)?);
    }
    env.restore(snapshot)?;
    Ok(results)
}
