//! Brute-force primal oracle: minimizes the expectation over a simplex grid
//! subject to the KL ball constraint.
//!
//! This is the verification counterpart of the dual solver. It enumerates
//! compositions of the probability simplex at a fixed resolution, keeps the
//! points inside the KL ball, and returns the smallest expectation found.
//! The exact nominal distribution is always included as a candidate, so the
//! feasible set is never empty.
//!
//! Enumeration is pruned with two bounds that cannot discard the optimum:
//! a continuous lower bound on the KL contribution of unassigned coordinates
//! (subtrees that cannot re-enter the ball are dropped), and a lower bound on
//! the objective completion (subtrees that cannot beat the incumbent are
//! dropped). The innermost two coordinates are resolved exactly: the
//! objective is linear there, so the minimum over the (contiguous) feasible
//! count interval sits at its endpoint, found by bisection on the convex KL
//! term. Unit tests pin the pruned search to a plain full enumeration.

use crate::dual::{DualError, ValueSupport};

/// Largest support size the oracle accepts; enumeration is exponential.
pub const MAX_ORACLE_SUPPORT: usize = 4;

/// Coarsest grid the oracle accepts.
pub const MAX_GRID_STEP: f64 = 0.01;

/// Slack added to the KL budget to absorb float dust in grid sums.
const KL_DUST: f64 = 1e-12;

/// Minimum of `sum_i p_i v_i` over grid points of the simplex with
/// `KL(p || probs) <= epsilon`, at resolution `grid_step`.
pub fn brute_force_inner_min(
    support: &ValueSupport,
    epsilon: f64,
    grid_step: f64,
) -> Result<f64, DualError> {
    if support.len() > MAX_ORACLE_SUPPORT {
        return Err(DualError::InvalidSupport(format!(
            "oracle handles supports of size <= {MAX_ORACLE_SUPPORT}, got {}",
            support.len()
        )));
    }
    if !(grid_step > 0.0 && grid_step <= MAX_GRID_STEP) {
        return Err(DualError::InvalidSupport(format!(
            "grid_step must be in (0, {MAX_GRID_STEP}], got {grid_step}"
        )));
    }
    if epsilon < 0.0 {
        return Err(DualError::NegativeEpsilon(epsilon));
    }

    // Coordinates with zero nominal mass are forced to zero by absolute
    // continuity; drop them. Sort the rest by value so low-objective corners
    // are visited first and the remaining-minimum bound is the next value.
    let mut order: Vec<usize> = (0..support.len())
        .filter(|&i| support.probs()[i] > 0.0)
        .collect();
    order.sort_by(|&a, &b| support.values()[a].total_cmp(&support.values()[b]));
    let values: Vec<f64> = order.iter().map(|&i| support.values()[i]).collect();
    let probs: Vec<f64> = order.iter().map(|&i| support.probs()[i]).collect();

    if values.len() == 1 {
        return Ok(values[0]);
    }

    let n_grid = (1.0 / grid_step).round() as usize;
    let search = GridSearch::new(&values, &probs, n_grid, epsilon + KL_DUST);
    // The exact nominal distribution is always feasible.
    let mut best = support.nominal_expectation();
    search.run(&mut best);
    Ok(best)
}

struct GridSearch<'a> {
    values: &'a [f64],
    probs: &'a [f64],
    n: usize,
    n_f: f64,
    budget: f64,
    /// `k ln k` for `k = 0..=n`.
    k_ln_k: Vec<f64>,
    /// `ln(n * q_i)` per coordinate.
    ln_nq: Vec<f64>,
    /// Total nominal mass of coordinates `i..`.
    suffix_mass: Vec<f64>,
}

impl<'a> GridSearch<'a> {
    fn new(values: &'a [f64], probs: &'a [f64], n: usize, budget: f64) -> Self {
        let n_f = n as f64;
        let k_ln_k = (0..=n)
            .map(|k| if k == 0 { 0.0 } else { (k as f64) * (k as f64).ln() })
            .collect();
        let ln_nq = probs.iter().map(|q| (n_f * q).ln()).collect();
        let mut suffix_mass = vec![0.0; values.len() + 1];
        for i in (0..values.len()).rev() {
            suffix_mass[i] = suffix_mass[i + 1] + probs[i];
        }
        Self {
            values,
            probs,
            n,
            n_f,
            budget,
            k_ln_k,
            ln_nq,
            suffix_mass,
        }
    }

    /// KL contribution of putting `k` grid units on coordinate `i`.
    #[inline]
    fn phi(&self, i: usize, k: usize) -> f64 {
        (self.k_ln_k[k] - (k as f64) * self.ln_nq[i]) / self.n_f
    }

    /// Continuous lower bound on the KL contribution of distributing `r`
    /// grid units over coordinates `from..` (mass proportional to nominal).
    #[inline]
    fn kl_floor(&self, from: usize, r: usize) -> f64 {
        if r == 0 {
            return 0.0;
        }
        let mass = (r as f64) / self.n_f;
        mass * (mass / self.suffix_mass[from]).ln()
    }

    fn run(&self, best: &mut f64) {
        self.descend(0, self.n, 0.0, 0.0, best);
    }

    fn descend(&self, depth: usize, remaining: usize, kl_part: f64, obj_part: f64, best: &mut f64) {
        if depth + 2 == self.values.len() {
            self.leaf_pair(depth, remaining, kl_part, obj_part, best);
            return;
        }
        let v_here = self.values[depth];
        let v_next = self.values[depth + 1];
        for k in (0..=remaining).rev() {
            let rest = remaining - k;
            let obj = obj_part + (k as f64) * v_here / self.n_f;
            // All later coordinates have value >= v_next, so this lower
            // bound only grows as k shrinks: stop instead of skipping.
            if obj + (rest as f64) * v_next / self.n_f >= *best {
                break;
            }
            let kl = kl_part + self.phi(depth, k);
            if kl + self.kl_floor(depth + 1, rest) > self.budget {
                continue;
            }
            self.descend(depth + 1, rest, kl, obj, best);
        }
    }

    /// Exact resolution of the last two coordinates. The objective is linear
    /// in the count `k` on the lower-valued coordinate, so the best feasible
    /// point is the largest `k` inside the (contiguous, by convexity of the
    /// KL term) feasible interval.
    fn leaf_pair(&self, depth: usize, remaining: usize, kl_part: f64, obj_part: f64, best: &mut f64) {
        let (a, b) = (depth, depth + 1);
        let cap = self.budget - kl_part;
        let f = |k: usize| self.phi(a, k) + self.phi(b, remaining - k);

        // Anchor at the continuous minimizer of the convex KL term.
        let qa = self.probs[a];
        let qb = self.probs[b];
        let k_star = ((remaining as f64) * qa / (qa + qb)).round() as usize;
        let k_star = k_star.min(remaining);
        let anchor = if f(k_star) <= cap {
            k_star
        } else if k_star < remaining && f(k_star + 1) <= cap {
            k_star + 1
        } else if k_star > 0 && f(k_star - 1) <= cap {
            k_star - 1
        } else {
            return; // no feasible grid point in this subtree
        };

        // Largest feasible k: f is non-decreasing right of the minimizer.
        let mut lo = anchor;
        let mut hi = remaining;
        if f(hi) <= cap {
            lo = hi;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if f(mid) <= cap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = lo;
        let obj = obj_part
            + ((k as f64) * self.values[a] + ((remaining - k) as f64) * self.values[b]) / self.n_f;
        if obj < *best {
            *best = obj;
        }
    }
}
