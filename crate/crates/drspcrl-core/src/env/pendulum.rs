//! Torque-limited pendulum swing-up with semi-implicit integration.
//!
//! The angle is measured from the upright position, which is the unstable
//! equilibrium the reward pulls toward:
//!
//! ```text
//! theta_dd = (tau - damping * theta_dot + mass * gravity * length * sin(theta))
//!            / (mass * length^2)
//! ```
//!
//! Integration is semi-implicit (symplectic) Euler at dt = 0.05: the
//! velocity is updated first and the new velocity moves the angle, which
//! bounds the energy drift of the undamped system instead of letting it
//! grow secularly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{
    Action, ActionSpace, EnvError, Environment, EnvSnapshot, PhysicsParams, SnapshotData,
    StepResult,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_steps: u32,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            damping: 0.1,
            gravity: 9.81,
            dt: 0.05,
            max_torque: 2.0,
            max_steps: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    config: PendulumConfig,
    mass: f64,
    length: f64,
    damping: f64,
    gravity: f64,
    theta: f64,
    theta_dot: f64,
    steps: u32,
    done: bool,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI) % (2.0 * PI);
    if t <= 0.0 {
        t += 2.0 * PI;
    }
    t - PI
}

impl PendulumEnv {
    pub fn new(config: PendulumConfig) -> Self {
        assert!(config.mass > 0.0 && config.length > 0.0 && config.gravity > 0.0);
        assert!(config.damping >= 0.0 && config.dt > 0.0);
        let (mass, length, damping, gravity) =
            (config.mass, config.length, config.damping, config.gravity);
        Self {
            config,
            mass,
            length,
            damping,
            gravity,
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            done: true,
        }
    }

    pub fn config(&self) -> &PendulumConfig {
        &self.config
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    /// Places the pendulum in a specific state; used by tests and demos.
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = wrap_angle(theta);
        self.theta_dot = theta_dot;
        self.steps = 0;
        self.done = false;
    }

    pub fn angular_acceleration(&self, theta: f64, theta_dot: f64, torque: f64) -> f64 {
        (torque - self.damping * theta_dot + self.mass * self.gravity * self.length * theta.sin())
            / (self.mass * self.length * self.length)
    }

    /// Total mechanical energy with the potential maximal upright.
    pub fn energy(&self) -> f64 {
        0.5 * self.mass * self.length * self.length * self.theta_dot * self.theta_dot
            + self.mass * self.gravity * self.length * self.theta.cos()
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for PendulumEnv {
    fn observation_dim(&self) -> usize {
        3
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box {
            low: vec![-self.config.max_torque],
            high: vec![self.config.max_torque],
        }
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: &Action, _rng: &mut ChaCha8Rng) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let torque = match action {
            Action::Continuous(t) if t.len() == 1 => t[0],
            Action::Continuous(t) => {
                return Err(EnvError::ActionOutOfRange(format!(
                    "expected 1 torque component, got {}",
                    t.len()
                )))
            }
            Action::Discrete(_) => {
                return Err(EnvError::ActionOutOfRange("expected a continuous action".into()))
            }
        };
        if !torque.is_finite() || torque.abs() > self.config.max_torque + 1e-12 {
            return Err(EnvError::ActionOutOfRange(format!(
                "torque {torque} outside [-{0}, {0}]",
                self.config.max_torque
            )));
        }

        let accel = self.angular_acceleration(self.theta, self.theta_dot, torque);
        self.theta_dot += self.config.dt * accel;
        self.theta = wrap_angle(self.theta + self.config.dt * self.theta_dot);

        let reward = -(self.theta * self.theta
            + 0.1 * self.theta_dot * self.theta_dot
            + 0.001 * torque * torque);
        self.steps += 1;
        self.done = self.steps >= self.config.max_steps;
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.done,
        })
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot(SnapshotData::Pendulum {
            theta: self.theta,
            theta_dot: self.theta_dot,
            steps: self.steps,
            done: self.done,
            mass: self.mass,
            length: self.length,
            damping: self.damping,
            gravity: self.gravity,
        })
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot.0 {
            SnapshotData::Pendulum {
                theta,
                theta_dot,
                steps,
                done,
                mass,
                length,
                damping,
                gravity,
            } => {
                self.theta = theta;
                self.theta_dot = theta_dot;
                self.steps = steps;
                self.done = done;
                self.mass = mass;
                self.length = length;
                self.damping = damping;
                self.gravity = gravity;
                Ok(())
            }
            _ => Err(EnvError::InvalidSnapshot),
        }
    }

    fn physics(&self) -> PhysicsParams {
        PhysicsParams::Pendulum {
            mass: self.mass,
            length: self.length,
            damping: self.damping,
            gravity: self.gravity,
        }
    }

    fn nominal_physics(&self) -> PhysicsParams {
        PhysicsParams::Pendulum {
            mass: self.config.mass,
            length: self.config.length,
            damping: self.config.damping,
            gravity: self.config.gravity,
        }
    }

    fn apply_physics_scale(&mut self, scales: &[f64]) -> Result<(), EnvError> {
        if scales.len() != 3 {
            return Err(EnvError::Dimension(format!(
                "pendulum expects 3 scale factors (mass, length, damping), got {}",
                scales.len()
            )));
        }
        if scales.iter().any(|s| *s <= 0.0) {
            return Err(EnvError::InvalidScale(format!("{scales:?}")));
        }
        self.mass = self.config.mass * scales[0];
        self.length = self.config.length * scales[1];
        self.damping = self.config.damping * scales[2];
        Ok(())
    }
}
