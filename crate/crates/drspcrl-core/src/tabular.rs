//! Exact robust dynamic programming on finite MDPs.
//!
//! Robust Bellman backups apply the KL-dual solver per (state, action) row of
//! the nominal kernel, so value iteration and policy evaluation here give
//! ground-truth robust values for any budget. These exact values are the
//! final judge of trained policies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::{solve_dual, DualError, DualSolverConfig, ValueSupport};

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid mdp: {0}")]
    Invalid(String),
    #[error("value iteration did not converge: residual {residual} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error(transparent)]
    Dual(#[from] DualError),
}

/// Finite MDP with a nominal transition kernel.
///
/// Rewards are indexed by (state, action); the kernel row `P0(. | s, a)` is
/// the nominal distribution over successor states. Serializes to a plain
/// JSON document (see `docs/formats.md`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened (s, a) table, row-major in `s`.
    rewards: Vec<f64>,
    /// Flattened (s, a, s') table.
    nominal_kernel: Vec<f64>,
    gamma: f64,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        rewards: Vec<f64>,
        nominal_kernel: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Invalid("need at least one state and action".into()));
        }
        if rewards.len() != n_states * n_actions {
            return Err(MdpError::Dimension(format!(
                "rewards has {} entries, expected {}",
                rewards.len(),
                n_states * n_actions
            )));
        }
        if nominal_kernel.len() != n_states * n_actions * n_states {
            return Err(MdpError::Dimension(format!(
                "kernel has {} entries, expected {}",
                nominal_kernel.len(),
                n_states * n_actions * n_states
            )));
        }
        if !rewards.iter().all(|r| r.is_finite()) {
            return Err(MdpError::Invalid("non-finite reward".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::Invalid(format!("gamma must be in [0, 1), got {gamma}")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &nominal_kernel[(s * n_actions + a) * n_states..][..n_states];
                if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                    return Err(MdpError::Invalid(format!("negative kernel entry at ({s}, {a})")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(MdpError::Invalid(format!(
                        "kernel row ({s}, {a}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            rewards,
            nominal_kernel,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        &self.nominal_kernel[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    /// Successor-value support of row (s, a): the values of all successors
    /// with positive nominal mass, paired with that mass.
    pub fn row_support(&self, s: usize, a: usize, values: &[f64]) -> Result<ValueSupport, MdpError> {
        if values.len() != self.n_states {
            return Err(MdpError::Dimension(format!(
                "value vector has {} entries, expected {}",
                values.len(),
                self.n_states
            )));
        }
        let row = self.kernel_row(s, a);
        let mut v = Vec::new();
        let mut p = Vec::new();
        for (next, &prob) in row.iter().enumerate() {
            if prob > 0.0 {
                v.push(values[next]);
                p.push(prob);
            }
        }
        // Renormalize away row-sum dust so the support validates.
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        Ok(ValueSupport::new(v, p)?)
    }
}

/// A policy over a finite MDP. Value iteration emits the deterministic kind;
/// policy-gradient agents evaluate the stochastic kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TabularPolicy {
    /// One action per state.
    Deterministic(Vec<usize>),
    /// One distribution over actions per state, flattened (s, a).
    Stochastic(Vec<f64>),
}

impl TabularPolicy {
    fn validate(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        match self {
            TabularPolicy::Deterministic(actions) => {
                if actions.len() != mdp.n_states {
                    return Err(MdpError::Dimension("policy length != n_states".into()));
                }
                if actions.iter().any(|a| *a >= mdp.n_actions) {
                    return Err(MdpError::Invalid("policy action out of range".into()));
                }
            }
            TabularPolicy::Stochastic(table) => {
                if table.len() != mdp.n_states * mdp.n_actions {
                    return Err(MdpError::Dimension("policy table size != S*A".into()));
                }
                for s in 0..mdp.n_states {
                    let row = &table[s * mdp.n_actions..][..mdp.n_actions];
                    if row.iter().any(|p| *p < 0.0) {
                        return Err(MdpError::Invalid("negative policy probability".into()));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-8 {
                        return Err(MdpError::Invalid(format!("policy row {s} sums to {sum}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn prob(&self, s: usize, a: usize, n_actions: usize) -> f64 {
        match self {
            TabularPolicy::Deterministic(actions) => {
                if actions[s] == a {
                    1.0
                } else {
                    0.0
                }
            }
            TabularPolicy::Stochastic(table) => table[s * n_actions + a],
        }
    }
}

/// Output of robust value iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustSolution {
    pub values: Vec<f64>,
    /// Flattened (s, a) robust Q table.
    pub q_values: Vec<f64>,
    /// Greedy policy, ties broken toward the lowest action index.
    pub policy: Vec<usize>,
    /// Budget the solution was computed at.
    pub epsilon: f64,
    pub iterations: usize,
    /// Final sup-norm residual.
    pub residual: f64,
}

/// Inner minimization used by the robust backup: maps a successor-value
/// support and a budget to the worst-case expectation. The production path
/// is the dual solver; verification swaps in the brute-force oracle.
pub trait InnerMin {
    fn inner_min(&self, support: &ValueSupport, epsilon: f64) -> Result<f64, DualError>;
}

/// Dual-solver inner minimization (the production path).
pub struct DualInnerMin {
    pub config: DualSolverConfig,
}

impl Default for DualInnerMin {
    fn default() -> Self {
        Self {
            config: DualSolverConfig::default(),
        }
    }
}

impl InnerMin for DualInnerMin {
    fn inner_min(&self, support: &ValueSupport, epsilon: f64) -> Result<f64, DualError> {
        Ok(solve_dual(support, epsilon, &self.config)?.robust_value)
    }
}

impl<F> InnerMin for F
where
    F: Fn(&ValueSupport, f64) -> Result<f64, DualError>,
{
    fn inner_min(&self, support: &ValueSupport, epsilon: f64) -> Result<f64, DualError> {
        self(support, epsilon)
    }
}

/// One robust Bellman backup sweep: `V'(s) = max_a r(s,a) + gamma * inf E[V]`.
///
/// Returns the backed-up state values and the (s, a) Q table. With
/// `epsilon = 0` this is exactly the nominal Bellman backup.
pub fn robust_bellman_backup(
    mdp: &TabularMdp,
    values: &[f64],
    epsilon: f64,
) -> Result<(Vec<f64>, Vec<f64>), MdpError> {
    robust_bellman_backup_with(mdp, values, epsilon, &DualInnerMin::default())
}

/// Backup with an injected inner minimization (verification hook).
pub fn robust_bellman_backup_with(
    mdp: &TabularMdp,
    values: &[f64],
    epsilon: f64,
    inner: &impl InnerMin,
) -> Result<(Vec<f64>, Vec<f64>), MdpError> {
    let mut q = vec![0.0; mdp.n_states * mdp.n_actions];
    let mut v = vec![0.0; mdp.n_states];
    for s in 0..mdp.n_states {
        let mut best = f64::NEG_INFINITY;
        for a in 0..mdp.n_actions {
            let support = mdp.row_support(s, a, values)?;
            let worst = inner.inner_min(&support, epsilon)?;
            let qa = mdp.reward(s, a) + mdp.gamma * worst;
            q[s * mdp.n_actions + a] = qa;
            if qa > best {
                best = qa;
            }
        }
        v[s] = best;
    }
    Ok((v, q))
}

/// Robust value iteration from `V = 0` to sup-norm residual `tol`.
pub fn robust_value_iteration(
    mdp: &TabularMdp,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RobustSolution, MdpError> {
    robust_value_iteration_with(mdp, epsilon, tol, max_iter, &DualInnerMin::default(), None)
}

/// Value iteration with an injected inner minimization and optional initial
/// values. The fixed point does not depend on the initial values; warm
/// starting only saves sweeps.
pub fn robust_value_iteration_with(
    mdp: &TabularMdp,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    inner: &impl InnerMin,
    init: Option<&[f64]>,
) -> Result<RobustSolution, MdpError> {
    if tol <= 0.0 {
        return Err(MdpError::Invalid("tol must be positive".into()));
    }
    let mut values = match init {
        Some(v) if v.len() == mdp.n_states => v.to_vec(),
        Some(_) => return Err(MdpError::Dimension("init length != n_states".into())),
        None => vec![0.0; mdp.n_states],
    };
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let (next, q) = robust_bellman_backup_with(mdp, &values, epsilon, inner)?;
        residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if residual <= tol {
            let policy = greedy_policy(mdp, &q);
            return Ok(RobustSolution {
                values,
                q_values: q,
                policy,
                epsilon,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(MdpError::NonConvergence {
        residual,
        iterations: max_iter,
    })
}

fn greedy_policy(mdp: &TabularMdp, q: &[f64]) -> Vec<usize> {
    (0..mdp.n_states)
        .map(|s| {
            let row = &q[s * mdp.n_actions..][..mdp.n_actions];
            let mut best = 0;
            for (a, &qa) in row.iter().enumerate() {
                if qa > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Robust evaluation of a fixed policy: fixed point of
/// `V(s) = sum_a pi(a|s) [ r(s,a) + gamma * inf E[V] ]`.
pub fn robust_policy_evaluation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, MdpError> {
    policy.validate(mdp)?;
    let inner = DualInnerMin::default();
    let mut values = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            let mut acc = 0.0;
            for a in 0..mdp.n_actions {
                let w = policy.prob(s, a, mdp.n_actions);
                if w == 0.0 {
                    continue;
                }
                let support = mdp.row_support(s, a, &values)?;
                let worst = inner.inner_min(&support, epsilon)?;
                acc += w * (mdp.reward(s, a) + mdp.gamma * worst);
            }
            next[s] = acc;
        }
        residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if residual <= tol {
            return Ok(values);
        }
    }
    Err(MdpError::NonConvergence {
        residual,
        iterations: max_iter,
    })
}
