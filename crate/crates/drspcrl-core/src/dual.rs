//! Exact solution of the KL-dual robust expectation over a finite support.
//!
//! For a support of future values `v` with nominal probabilities `p` and a
//! robustness budget `eps`, the robust (worst-case) expectation
//!
//! ```text
//! inf { E_q[v] : KL(q || p) <= eps }
//! ```
//!
//! equals the maximum over the dual variable `beta >= 0` of
//!
//! ```text
//! -beta * log E_p[exp(-v / beta)] - beta * eps
//! ```
//!
//! The maximizer `beta*` is the marginal cost of robustness: the derivative
//! of the robust value with respect to `eps` is `-beta*`. The worst-case
//! distribution is the exponential tilt `q_i ∝ p_i exp(-v_i / beta*)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the dual solver and its input types.
#[derive(Debug, Error)]
pub enum DualError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("support violation at index {index}: p > 0 where q = 0")]
    SupportViolation { index: usize },
    #[error("invalid support: {0}")]
    InvalidSupport(String),
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("epsilon must be non-negative, got {0}")]
    NegativeEpsilon(f64),
}

/// Finite next-state support: values `v_i` with nominal probabilities `p_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueSupport {
    values: Vec<f64>,
    probs: Vec<f64>,
}

const PROB_SUM_TOL: f64 = 1e-9;

impl ValueSupport {
    /// Validates lengths, finiteness, non-negativity and normalization.
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self, DualError> {
        if values.len() != probs.len() {
            return Err(DualError::LengthMismatch {
                left: values.len(),
                right: probs.len(),
            });
        }
        if values.is_empty() {
            return Err(DualError::InvalidSupport("empty support".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DualError::InvalidSupport("non-finite value".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DualError::InvalidSupport("negative or non-finite probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(DualError::InvalidSupport(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { values, probs })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Expectation under the nominal probabilities.
    pub fn nominal_expectation(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum()
    }

    /// Smallest value carrying positive nominal probability.
    pub fn min_supported_value(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min)
    }

    /// Total nominal mass on the argmin set (values within `ARGMIN_REL_TOL`
    /// of the supported minimum).
    fn argmin_mass(&self) -> f64 {
        let m = self.min_supported_value();
        let tol = ARGMIN_REL_TOL * m.abs().max(1.0);
        self.values
            .iter()
            .zip(&self.probs)
            .filter(|(v, p)| **p > 0.0 && **v <= m + tol)
            .map(|(_, p)| *p)
            .sum()
    }
}

const ARGMIN_REL_TOL: f64 = 1e-12;

/// Configuration for the one-dimensional dual search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolverConfig {
    /// Lower end of the beta bracket (must be positive).
    pub beta_min: f64,
    /// Upper end of the beta bracket.
    pub beta_max: f64,
    /// Convergence tolerance on log(beta).
    pub tolerance: f64,
    /// Iteration cap for the golden-section search.
    pub max_iterations: usize,
}

impl Default for DualSolverConfig {
    fn default() -> Self {
        Self {
            beta_min: 1e-6,
            beta_max: 1e6,
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

impl DualSolverConfig {
    fn validate(&self) -> Result<(), DualError> {
        if self.beta_min <= 0.0 || self.beta_max <= self.beta_min {
            return Err(DualError::InvalidSupport(format!(
                "invalid beta bracket [{}, {}]",
                self.beta_min, self.beta_max
            )));
        }
        if self.tolerance <= 0.0 {
            return Err(DualError::InvalidSupport("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Solution of the dual problem for one (state, action) support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualSolution {
    /// Maximizing dual variable, zero when the point-mass boundary binds.
    pub beta_star: f64,
    /// Worst-case expectation over the KL ball.
    pub robust_value: f64,
    /// Worst-case distribution (exponential tilt at `beta_star`).
    pub worst_case_probs: Vec<f64>,
    /// Whether `beta_star` sits on a bracket boundary rather than interior.
    pub at_boundary: bool,
}

/// KL divergence `sum_i p_i log(p_i / q_i)` with the `0 log 0 = 0` convention.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, DualError> {
    if p.len() != q.len() {
        return Err(DualError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(DualError::SupportViolation { index: i });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// Dual objective `-beta log E_p[exp(-v/beta)] - beta eps`, shift-stabilized
/// at the supported minimum so it never overflows for `v - min(v)` up to 1e4.
pub fn dual_objective(beta: f64, support: &ValueSupport, epsilon: f64) -> Result<f64, DualError> {
    if beta <= 0.0 {
        return Err(DualError::NonPositiveBeta(beta));
    }
    let m = support.min_supported_value();
    let mut sum = 0.0;
    for (&v, &p) in support.values().iter().zip(support.probs()) {
        if p > 0.0 {
            sum += p * (-(v - m) / beta).exp();
        }
    }
    Ok(m - beta * sum.ln() - beta * epsilon)
}

/// Exponential tilt `q_i ∝ p_i exp(-v_i/beta)`, the worst-case distribution
/// at a given dual variable.
pub fn worst_case_distribution(support: &ValueSupport, beta: f64) -> Result<Vec<f64>, DualError> {
    if beta <= 0.0 {
        return Err(DualError::NonPositiveBeta(beta));
    }
    let m = support.min_supported_value();
    let mut tilted: Vec<f64> = support
        .values()
        .iter()
        .zip(support.probs())
        .map(|(&v, &p)| if p > 0.0 { p * (-(v - m) / beta).exp() } else { 0.0 })
        .collect();
    let z: f64 = tilted.iter().sum();
    for t in &mut tilted {
        *t /= z;
    }
    Ok(tilted)
}

/// Maximizes the dual objective over `beta` in the configured bracket.
///
/// Special cases are handled analytically: `eps = 0` returns the nominal
/// expectation (the supremum is approached as `beta -> inf`, not attained),
/// and `eps >= -log P(argmin)` returns the supported minimum with
/// `beta_star = 0` (the point mass on the argmin set is feasible). Otherwise
/// a golden-section search on `log beta` locates the interior maximizer; the
/// objective is concave in `beta`, hence unimodal in `log beta`.
pub fn solve_dual(
    support: &ValueSupport,
    epsilon: f64,
    config: &DualSolverConfig,
) -> Result<DualSolution, DualError> {
    config.validate()?;
    if epsilon < 0.0 {
        return Err(DualError::NegativeEpsilon(epsilon));
    }

    if epsilon == 0.0 {
        return Ok(DualSolution {
            beta_star: config.beta_max,
            robust_value: support.nominal_expectation(),
            worst_case_probs: support.probs().to_vec(),
            at_boundary: true,
        });
    }

    // Point-mass feasibility: if the KL ball contains the distribution
    // concentrated on the argmin set, the primal infimum is min(v).
    let argmin_mass = support.argmin_mass();
    let point_mass_kl = -argmin_mass.ln();
    if epsilon >= point_mass_kl {
        let m = support.min_supported_value();
        let tol = ARGMIN_REL_TOL * m.abs().max(1.0);
        let worst: Vec<f64> = support
            .values()
            .iter()
            .zip(support.probs())
            .map(|(&v, &p)| {
                if p > 0.0 && v <= m + tol {
                    p / argmin_mass
                } else {
                    0.0
                }
            })
            .collect();
        return Ok(DualSolution {
            beta_star: 0.0,
            robust_value: m,
            worst_case_probs: worst,
            at_boundary: true,
        });
    }

    let lo = config.beta_min.ln();
    let hi = config.beta_max.ln();
    let objective = |x: f64| {
        dual_objective(x.exp(), support, epsilon).expect("beta > 0 inside bracket")
    };
    let (x_star, value) = golden_section_max(
        objective,
        lo,
        hi,
        config.tolerance,
        config.max_iterations,
    );
    let beta_star = x_star.exp();
    let boundary_slack = (hi - lo) * 1e-6;
    let at_boundary = x_star - lo <= boundary_slack || hi - x_star <= boundary_slack;
    let worst_case_probs = worst_case_distribution(support, beta_star)?;

    Ok(DualSolution {
        beta_star,
        robust_value: value,
        worst_case_probs,
        at_boundary,
    })
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
///
/// Returns `(x_max, f_max)`.
fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;

    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);

    for _ in 0..max_iter {
        if b - a <= tol {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }

    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn support(values: &[f64], probs: &[f64]) -> ValueSupport {
        ValueSupport::new(values.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn kl_point_mass_vs_uniform_is_ln2() {
        let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_direct_formula() {
        let kl = kl_divergence(&[0.7, 0.3], &[0.5, 0.5]).unwrap();
        let expected = 0.7 * (1.4f64).ln() + 0.3 * (0.6f64).ln();
        assert!((kl - expected).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_length_mismatch_and_support_violation() {
        assert!(matches!(
            kl_divergence(&[1.0], &[0.5, 0.5]),
            Err(DualError::LengthMismatch { .. })
        ));
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(DualError::SupportViolation { index: 1 })
        ));
    }

    #[test]
    fn value_support_validation() {
        assert!(ValueSupport::new(vec![], vec![]).is_err());
        assert!(ValueSupport::new(vec![1.0], vec![0.9]).is_err());
        assert!(ValueSupport::new(vec![1.0, 2.0], vec![0.5]).is_err());
        assert!(ValueSupport::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(ValueSupport::new(vec![1.0, 2.0], vec![-0.1, 1.1]).is_err());
        assert!(ValueSupport::new(vec![1.0, 2.0], vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn dual_objective_singleton() {
        let s = support(&[0.0], &[1.0]);
        let obj = dual_objective(1.0, &s, 0.5).unwrap();
        assert!((obj - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn dual_objective_constant_values_at_zero_eps() {
        let s = support(&[3.0, 3.0, 3.0], &[0.2, 0.3, 0.5]);
        for beta in [1e-6, 1.0, 1e6] {
            let obj = dual_objective(beta, &s, 0.0).unwrap();
            assert!((obj - 3.0).abs() < 1e-12, "beta={beta} gave {obj}");
        }
    }

    #[test]
    fn dual_objective_two_point_closed_form() {
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        let obj = dual_objective(1.0, &s, 0.0).unwrap();
        let expected = -(0.5 * (1.0 + (-1.0f64).exp())).ln();
        assert!((obj - expected).abs() < 1e-15);
    }

    #[test]
    fn dual_objective_rejects_nonpositive_beta() {
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(matches!(
            dual_objective(0.0, &s, 0.1),
            Err(DualError::NonPositiveBeta(_))
        ));
    }

    #[test]
    fn dual_objective_is_overflow_safe_for_wide_value_ranges() {
        let s = support(&[0.0, 1e4], &[0.5, 0.5]);
        let obj = dual_objective(1e-6, &s, 0.1).unwrap();
        assert!(obj.is_finite());
    }

    #[test]
    fn worst_case_constant_values_is_nominal() {
        let s = support(&[2.0, 2.0], &[0.5, 0.5]);
        let w = worst_case_distribution(&s, 0.7).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn worst_case_large_beta_approaches_nominal() {
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        let w = worst_case_distribution(&s, 1e9).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn worst_case_matches_tilt_formula() {
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        let w = worst_case_distribution(&s, 1.0).unwrap();
        let z = 1.0 + (-1.0f64).exp();
        assert!((w[0] - 1.0 / z).abs() < 1e-15);
        assert!((w[1] - (-1.0f64).exp() / z).abs() < 1e-15);
    }

    #[test]
    fn worst_case_shifts_mass_toward_argmin() {
        let s = support(&[-1.0, 0.5, 2.0], &[0.2, 0.5, 0.3]);
        let w = worst_case_distribution(&s, 0.5).unwrap();
        assert!(w[0] > 0.2);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solve_dual_zero_eps_returns_nominal_expectation() {
        let s = support(&[1.0, -2.0, 4.0], &[0.3, 0.3, 0.4]);
        let sol = solve_dual(&s, 0.0, &DualSolverConfig::default()).unwrap();
        assert!((sol.robust_value - s.nominal_expectation()).abs() < 1e-12);
        assert!(sol.at_boundary);
        assert_eq!(sol.worst_case_probs, s.probs());
    }

    #[test]
    fn solve_dual_constant_values_any_eps() {
        let s = support(&[0.0, 0.0, 0.0], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let sol = solve_dual(&s, 0.2, &DualSolverConfig::default()).unwrap();
        assert_eq!(sol.robust_value, 0.0);
        for (w, p) in sol.worst_case_probs.iter().zip(s.probs()) {
            assert!((w - p).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_dual_point_mass_boundary() {
        // eps = 1 >= ln 2, so the point mass on the minimum is feasible.
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        let sol = solve_dual(&s, 1.0, &DualSolverConfig::default()).unwrap();
        assert_eq!(sol.robust_value, 0.0);
        assert_eq!(sol.beta_star, 0.0);
        assert!(sol.at_boundary);
        assert_eq!(sol.worst_case_probs, vec![1.0, 0.0]);
    }

    #[test]
    fn solve_dual_interior_matches_binary_entropy_reduction() {
        // For values [0, 1] with uniform nominal, the primal optimum puts
        // mass p on the zero-value atom where H(p) = ln 2 - eps, so the
        // robust value is 1 - p.
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        let eps = 0.1;
        let sol = solve_dual(&s, eps, &DualSolverConfig::default()).unwrap();
        let h_target = std::f64::consts::LN_2 - eps;
        // Invert the binary entropy on [0.5, 1] by bisection.
        let (mut lo, mut hi) = (0.5f64, 1.0f64 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let h = -mid * mid.ln() - (1.0 - mid) * (1.0 - mid).ln();
            if h > h_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let expected = 1.0 - 0.5 * (lo + hi);
        assert!(
            (sol.robust_value - expected).abs() < 1e-8,
            "robust {} vs entropy inversion {}",
            sol.robust_value,
            expected
        );
        assert!(!sol.at_boundary);
        // Interior solutions meet the KL budget exactly.
        let kl = kl_divergence(&sol.worst_case_probs, s.probs()).unwrap();
        assert!((kl - eps).abs() < 1e-6, "KL {kl} vs eps {eps}");
    }

    #[test]
    fn solve_dual_rejects_negative_epsilon() {
        let s = support(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(matches!(
            solve_dual(&s, -0.1, &DualSolverConfig::default()),
            Err(DualError::NegativeEpsilon(_))
        ));
    }

    #[test]
    fn solve_dual_bounds_hold() {
        let s = support(&[-3.0, 1.0, 5.0], &[0.2, 0.5, 0.3]);
        for eps in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let sol = solve_dual(&s, eps, &DualSolverConfig::default()).unwrap();
            assert!(sol.robust_value >= -3.0 - 1e-9);
            assert!(sol.robust_value <= s.nominal_expectation() + 1e-9);
        }
    }

    #[test]
    fn solve_dual_monotone_in_epsilon() {
        let s = support(&[-1.0, 0.0, 2.0, 4.0], &[0.1, 0.4, 0.3, 0.2]);
        let cfg = DualSolverConfig::default();
        let mut prev = f64::INFINITY;
        for eps in [0.0, 0.01, 0.05, 0.1, 0.3, 0.7, 1.5] {
            let v = solve_dual(&s, eps, &cfg).unwrap().robust_value;
            assert!(v <= prev + 1e-9, "eps={eps}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn solve_dual_tilting_consistency() {
        let s = support(&[0.0, 1.0, 3.0], &[0.5, 0.3, 0.2]);
        let sol = solve_dual(&s, 0.2, &DualSolverConfig::default()).unwrap();
        assert!(!sol.at_boundary);
        let tilt = worst_case_distribution(&s, sol.beta_star).unwrap();
        for (a, b) in sol.worst_case_probs.iter().zip(&tilt) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn dual_objective_unimodal_in_log_beta() {
        let s = support(&[-2.0, 0.5, 1.0, 4.0], &[0.25, 0.25, 0.25, 0.25]);
        let eps = 0.2;
        let mut values = Vec::new();
        for i in 0..100 {
            let x = -6.0 + 12.0 * (i as f64) / 99.0;
            values.push(dual_objective(10f64.powf(x), &s, eps).unwrap());
        }
        // Once the sequence starts decreasing it must never increase again.
        let mut decreasing = false;
        for w in values.windows(2) {
            if w[1] < w[0] - 1e-12 {
                decreasing = true;
            } else if decreasing && w[1] > w[0] + 1e-9 {
                panic!("dual objective is not unimodal");
            }
        }
    }
}
