//! Stochastic chain with a risky shortcut and a safe detour.
//!
//! Seven states laid out left to right:
//!
//! ```text
//! [0 terminal] [1 exit +0.1] [2 corridor] [3 fork] [4 ledge] [5 pit -1] [6 goal +1]
//! ```
//!
//! State 2 is the start. Walking in the corridor moves in the chosen
//! direction with probability `1 - slip_prob` and opposite with `slip_prob`.
//! At the fork, action `right` jumps straight for the goal but slips into
//! the pit with probability `slip_prob`; action `left` takes the sure-footed
//! ledge route (3 -> 4 -> 6), one step longer but deterministic. The pit
//! costs -1 and drops the walker back at the fork. Reward +1 is collected in
//! the goal state, +0.1 in the exit state; both then terminate.
//!
//! The geometry makes the nominal optimum take the shortcut while the
//! robust optimum at moderate budgets prefers the detour: deterministic
//! transitions admit no KL perturbation, so the ledge route keeps its value
//! against any adversary while the shortcut's slip mass gets inflated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tabular::TabularMdp;

use super::{
    Action, ActionSpace, EnvError, Environment, EnvSnapshot, PhysicsParams, SnapshotData,
    StepResult,
};

pub const N_STATES: usize = 7;
pub const N_ACTIONS: usize = 2;

pub const TERMINAL: usize = 0;
pub const EXIT: usize = 1;
pub const CORRIDOR: usize = 2;
pub const FORK: usize = 3;
pub const LEDGE: usize = 4;
pub const PIT: usize = 5;
pub const GOAL: usize = 6;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Probability of moving opposite to the chosen direction on the
    /// stochastic transitions (corridor walk and the shortcut jump).
    pub slip_prob: f64,
    /// Discount used when converting to a `TabularMdp`.
    pub gamma: f64,
    /// Step cap per episode.
    pub max_steps: u32,
    /// Start state.
    pub start_state: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            slip_prob: 0.12,
            gamma: 0.7,
            max_steps: 200,
            start_state: CORRIDOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainEnv {
    config: ChainConfig,
    nominal_slip: f64,
    slip_prob: f64,
    state: usize,
    steps: u32,
    done: bool,
}

impl ChainEnv {
    pub fn new(config: ChainConfig) -> Self {
        assert!(
            (0.0..=0.5).contains(&config.slip_prob),
            "slip_prob must be in [0, 0.5]"
        );
        assert!(config.start_state < N_STATES);
        let slip = config.slip_prob;
        Self {
            config,
            nominal_slip: slip,
            slip_prob: slip,
            state: 0,
            steps: 0,
            done: true,
        }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    /// Reward for acting in `state`; independent of the action.
    pub fn reward_at(state: usize) -> f64 {
        match state {
            EXIT => 0.1,
            PIT => -1.0,
            GOAL => 1.0,
            _ => 0.0,
        }
    }

    /// Successor distribution of (state, action) under slip probability `sp`,
    /// as (state, probability) pairs.
    fn transitions(state: usize, action: usize, sp: f64) -> Vec<(usize, f64)> {
        match (state, action) {
            (TERMINAL, _) => vec![(TERMINAL, 1.0)],
            (EXIT, _) | (GOAL, _) => vec![(TERMINAL, 1.0)],
            (CORRIDOR, LEFT) => vec![(EXIT, 1.0 - sp), (FORK, sp)],
            (CORRIDOR, RIGHT) => vec![(FORK, 1.0 - sp), (EXIT, sp)],
            (FORK, LEFT) => vec![(LEDGE, 1.0)],
            (FORK, RIGHT) => vec![(GOAL, 1.0 - sp), (PIT, sp)],
            (LEDGE, LEFT) => vec![(FORK, 1.0)],
            (LEDGE, RIGHT) => vec![(GOAL, 1.0)],
            (PIT, _) => vec![(FORK, 1.0)],
            _ => unreachable!("state {state} action {action}"),
        }
    }

    /// Exact finite-MDP view of this environment at the active slip
    /// probability; rewards and kernel rows match `step` exactly.
    pub fn to_tabular(&self) -> TabularMdp {
        let mut rewards = vec![0.0; N_STATES * N_ACTIONS];
        let mut kernel = vec![0.0; N_STATES * N_ACTIONS * N_STATES];
        for s in 0..N_STATES {
            for a in 0..N_ACTIONS {
                rewards[s * N_ACTIONS + a] = Self::reward_at(s);
                for (next, p) in Self::transitions(s, a, self.slip_prob) {
                    kernel[(s * N_ACTIONS + a) * N_STATES + next] += p;
                }
            }
        }
        TabularMdp::new(N_STATES, N_ACTIONS, rewards, kernel, self.config.gamma)
            .expect("chain tables are valid by construction")
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.state as f64]
    }
}

impl Environment for ChainEnv {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(N_ACTIONS)
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = self.config.start_state;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &Action, rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let a = match action {
            Action::Discrete(a) if *a < N_ACTIONS => *a,
            Action::Discrete(a) => {
                return Err(EnvError::ActionOutOfRange(format!("discrete action {a}")))
            }
            Action::Continuous(_) => {
                return Err(EnvError::ActionOutOfRange("expected a discrete action".into()))
            }
        };
        let reward = Self::reward_at(self.state);
        let transitions = Self::transitions(self.state, a, self.slip_prob);
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = transitions[transitions.len() - 1].0;
        for (candidate, p) in &transitions {
            acc += p;
            if draw < acc {
                next = *candidate;
                break;
            }
        }
        self.state = next;
        self.steps += 1;
        self.done = self.state == TERMINAL || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.done,
        })
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot(SnapshotData::Chain {
            state: self.state,
            steps: self.steps,
            done: self.done,
            slip_prob: self.slip_prob,
        })
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot.0 {
            SnapshotData::Chain {
                state,
                steps,
                done,
                slip_prob,
            } => {
                self.state = state;
                self.steps = steps;
                self.done = done;
                self.slip_prob = slip_prob;
                Ok(())
            }
            _ => Err(EnvError::InvalidSnapshot),
        }
    }

    fn physics(&self) -> PhysicsParams {
        PhysicsParams::Chain {
            slip_prob: self.slip_prob,
        }
    }

    fn nominal_physics(&self) -> PhysicsParams {
        PhysicsParams::Chain {
            slip_prob: self.nominal_slip,
        }
    }

    fn apply_physics_scale(&mut self, scales: &[f64]) -> Result<(), EnvError> {
        if scales.len() != 1 {
            return Err(EnvError::Dimension(format!(
                "chain expects 1 scale factor, got {}",
                scales.len()
            )));
        }
        if scales[0] <= 0.0 {
            return Err(EnvError::InvalidScale(format!("{}", scales[0])));
        }
        // Scaled slip stays inside its own domain.
        self.slip_prob = (self.nominal_slip * scales[0]).clamp(0.0, 0.5);
        Ok(())
    }
}
