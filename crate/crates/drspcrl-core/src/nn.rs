//! Small dense networks with hand-derived backpropagation.
//!
//! Everything the agent learns fits in a two-hidden-layer tanh MLP, so the
//! forward/backward passes are written out directly against a flat parameter
//! vector. The same layout drives the Adam optimizer and the checkpoint
//! format. Gradients are exact; the test suite pins every path to central
//! finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Architecture of a dense network: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        assert!(input_dim > 0 && output_dim > 0);
        assert!(hidden_dims.iter().all(|d| *d > 0));
        Self {
            input_dim,
            hidden_dims,
            output_dim,
        }
    }

    /// Layer widths including input and output.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }

    pub fn n_params(&self) -> usize {
        self.widths()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Dense network over a flat parameter vector. Per layer the weights come
/// first (row-major, `out x in`) followed by the biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Post-activation values per layer, kept for the backward pass.
pub struct MlpCache {
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-uniform initialization from the given stream.
    pub fn init(spec: MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let widths = spec.widths();
        let mut params = Vec::with_capacity(spec.n_params());
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { spec, params }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).0
    }

    pub fn forward_cached(&self, input: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(input.len(), self.spec.input_dim, "input dimension mismatch");
        let widths = self.spec.widths();
        let n_layers = widths.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for (layer, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let prev = &activations[layer];
            let mut out = vec![0.0; n_out];
            for (o, out_o) in out.iter_mut().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut acc = biases[o];
                for (wi, xi) in row.iter().zip(prev) {
                    acc += wi * xi;
                }
                *out_o = if layer + 1 < n_layers { acc.tanh() } else { acc };
            }
            activations.push(out);
        }
        (activations.last().unwrap().clone(), MlpCache { activations })
    }

    /// Backpropagates `upstream = dL/d(output)` through the cached forward
    /// pass, accumulating parameter gradients into `grad` (same layout as
    /// `params`) and returning `dL/d(input)`.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(upstream.len(), self.spec.output_dim);
        let widths = self.spec.widths();
        let n_layers = widths.len() - 1;

        // Parameter offsets per layer.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in widths.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }

        let mut delta = upstream.to_vec();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (widths[layer], widths[layer + 1]);
            let base = offsets[layer];
            let prev = &cache.activations[layer];
            // Parameter gradients for this layer.
            for o in 0..n_out {
                let d = delta[o];
                let row = &mut grad[base + o * n_in..base + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(prev) {
                    *g += d * xi;
                }
                grad[base + n_in * n_out + o] += d;
            }
            // Propagate to the previous layer.
            let weights = &self.params[base..base + n_in * n_out];
            let mut next_delta = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                let row = &weights[o * n_in..(o + 1) * n_in];
                for (nd, wi) in next_delta.iter_mut().zip(row) {
                    *nd += wi * d;
                }
            }
            if layer > 0 {
                // Through the tanh of the previous layer's output.
                for (nd, y) in next_delta.iter_mut().zip(prev) {
                    *nd *= 1.0 - y * y;
                }
            }
            delta = next_delta;
        }
        delta
    }
}

/// Stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic sigmoid, the derivative of the softplus.
pub fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let recip = 1.0 / (1.0 + e);
    if x >= 0.0 {
        recip
    } else {
        e * recip
    }
}

/// Adaptive-moment gradient descent over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Diagonal-Gaussian policy: an MLP mean head plus a state-independent
/// log-std vector appended at the end of its own parameter block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn init(obs_dim: usize, hidden_dims: Vec<usize>, action_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mean_net = Mlp::init(MlpSpec::new(obs_dim, hidden_dims, action_dim), rng);
        Self {
            mean_net,
            log_std: vec![-0.5; action_dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Total trainable parameters: mean net followed by the log-std block.
    pub fn n_params(&self) -> usize {
        self.mean_net.n_params() + self.log_std.len()
    }

    /// Draws an action and returns its log-density.
    pub fn sample(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        use rand_distr::StandardNormal;
        let mean = self.mean_net.forward(obs);
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(mu, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * z
            })
            .collect();
        let lp = self.log_prob_given_mean(&mean, &action);
        (action, lp)
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> f64 {
        let mean = self.mean_net.forward(obs);
        self.log_prob_given_mean(&mean, action)
    }

    fn log_prob_given_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((mu, a), ls)| {
                let z = (a - mu) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_TWO_PI
            })
            .sum()
    }

    /// Accumulates `coeff * d log pi(a|s) / d params` into the gradient
    /// blocks for the mean net and the log-std vector.
    pub fn accumulate_log_prob_grad(
        &self,
        obs: &[f64],
        action: &[f64],
        coeff: f64,
        grad_mean: &mut [f64],
        grad_log_std: &mut [f64],
    ) {
        let (mean, cache) = self.mean_net.forward_cached(obs);
        let mut upstream = vec![0.0; mean.len()];
        for d in 0..mean.len() {
            let sigma = self.log_std[d].exp();
            let z = (action[d] - mean[d]) / sigma;
            // d logp / d mu = (a - mu) / sigma^2
            upstream[d] = coeff * z / sigma;
            // d logp / d log_std = z^2 - 1
            grad_log_std[d] += coeff * (z * z - 1.0);
        }
        self.mean_net.backward(&cache, &upstream, grad_mean);
    }

    /// Entropy of the diagonal Gaussian (state independent).
    pub fn entropy(&self) -> f64 {
        const HALF_LN_TWO_PI_E: f64 = 1.418_938_533_204_672_7;
        self.log_std.iter().map(|ls| ls + HALF_LN_TWO_PI_E).sum()
    }
}

/// Dual-variable network: softplus output plus a positive floor, so the
/// predicted beta is always valid for the robust value formula.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualNet {
    pub net: Mlp,
    pub beta_floor: f64,
}

impl DualNet {
    pub fn init(input_dim: usize, hidden_dims: Vec<usize>, beta_floor: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(beta_floor > 0.0);
        Self {
            net: Mlp::init(MlpSpec::new(input_dim, hidden_dims, 1), rng),
            beta_floor,
        }
    }

    /// beta(s, a) = softplus(z) + floor, always >= floor > 0.
    pub fn beta(&self, input: &[f64]) -> f64 {
        softplus(self.net.forward(input)[0]) + self.beta_floor
    }

    /// Accumulates `coeff * d beta / d params` into `grad`.
    pub fn accumulate_beta_grad(&self, input: &[f64], coeff: f64, grad: &mut [f64]) {
        let (out, cache) = self.net.forward_cached(input);
        let upstream = vec![coeff * sigmoid(out[0])];
        self.net.backward(&cache, &upstream, grad);
    }
}
