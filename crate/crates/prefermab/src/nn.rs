//! Minimal dense-network kernel.
//!
//! Everything the agents need and nothing more: a fixed family of small
//! multilayer perceptrons (tanh hidden layers, identity output), exact
//! reverse-mode gradients, a bias-corrected Adam step, and a central
//! finite-difference oracle used to verify the backward pass.
//!
//! All math is in `f64` so training runs replay bit-for-bit given the same
//! seed and configuration.

use rand::Rng;

use crate::{Error, Result};

/// Hidden width used by every network in the crate.
pub const HIDDEN: usize = 16;

/// A dense feed-forward network: tanh on hidden layers, identity on the
/// output layer. Weights are stored row-major, `weights[l][o * in + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l]` the output of layer l.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache always has layers")
    }
}

/// Gradients of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; net.sizes[0]],
        }
    }

    /// Accumulate `other` into `self`.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(&other.input) {
            *x += y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            for x in w {
                *x *= factor;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x *= factor;
            }
        }
        for x in &mut self.input {
            *x *= factor;
        }
    }

    /// Flatten in the same canonical order as [`Mlp::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// The standard architecture: `[input, 16, 16, output]`, weights drawn
    /// from the scaled-uniform range ±sqrt(6/(fan_in+fan_out)), zero biases.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::with_sizes(&[input, HIDDEN, HIDDEN, output], rng)
    }

    pub fn with_sizes(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output layers");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// All-zero network with the given sizes (useful for tests and for
    /// reconstructing a network before loading parameters).
    pub fn zeros(sizes: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            weights.push(vec![0.0; sizes[l] * sizes[l + 1]]);
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters in canonical order: per layer, weights row-major then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "parameter blob has {} values, network needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut idx = 0;
        for l in 0..self.layer_count() {
            let wn = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[idx..idx + wn]);
            idx += wn;
            let bn = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[idx..idx + bn]);
            idx += bn;
        }
        Ok(())
    }

    /// Forward pass, returning the output and a cache for [`Mlp::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.sizes[0] {
            return Err(Error::InvalidArgument(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.sizes[0]
            )));
        }
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_vec());
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &activations[l];
            let mut out = vec![0.0; n_out];
            let last = l == self.layer_count() - 1;
            for o in 0..n_out {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let mut z = self.biases[l][o];
                for (wi, xi) in row.iter().zip(prev) {
                    z += wi * xi;
                }
                out[o] = if last { z } else { z.tanh() };
            }
            activations.push(out);
        }
        let y = activations.last().unwrap().clone();
        Ok((y, ForwardCache { activations }))
    }

    /// Output only, when no backward pass is needed.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Exact reverse-mode gradients of a scalar loss given `dL/dy`.
    ///
    /// For hidden layers the cache stores post-tanh activations `a`, so the
    /// local derivative is `1 - a²`. The output layer is identity.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Gradients {
        assert_eq!(
            upstream.len(),
            self.output_dim(),
            "upstream gradient must match output dimension"
        );
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &cache.activations[l];
            // delta currently holds dL/dz for this layer (identity output)
            // or dL/da which we convert through tanh' below for hidden layers.
            if l != self.layer_count() - 1 {
                let a = &cache.activations[l + 1];
                for (d, ai) in delta.iter_mut().zip(a) {
                    *d *= 1.0 - ai * ai;
                }
            }
            let mut next_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                grads.biases[l][o] += d;
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                let wrow = &self.weights[l][o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    row[i] += d * prev[i];
                    next_delta[i] += d * wrow[i];
                }
            }
            delta = next_delta;
        }
        grads.input = delta;
        grads
    }

    /// Apply one Adam step to every parameter.
    pub fn adam_update(&mut self, grads: &Gradients, state: &mut AdamState, lr: f64) {
        let flat = grads.to_flat();
        let mut params = self.params_flat();
        state.step(&mut params, &flat, lr);
        self.set_params_flat(&params)
            .expect("flat buffers have matching lengths");
    }
}

/// Bias-corrected Adam accumulators (β1=0.9, β2=0.999, ε=1e-8).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn for_net(net: &Mlp) -> Self {
        Self::new(net.param_count())
    }

    /// In-place Adam update of `params` given `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam state shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        self.t += 1;
        let b1t = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let b2t = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Central finite-difference gradients of the scalar loss `L = upstream · y`
/// with respect to every parameter. The independent oracle for the backward
/// pass; kept in the library so acceptance checks can call it directly.
pub fn finite_difference_gradients(net: &Mlp, x: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
    let loss = |net: &Mlp| -> f64 {
        let y = net.infer(x).expect("shape fixed by caller");
        y.iter().zip(upstream).map(|(yi, ui)| yi * ui).sum()
    };
    let base = net.params_flat();
    let mut grads = Vec::with_capacity(base.len());
    let mut probe = net.clone();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        probe.set_params_flat(&plus).unwrap();
        let up = loss(&probe);
        let mut minus = base.clone();
        minus[i] -= h;
        probe.set_params_flat(&minus).unwrap();
        let down = loss(&probe);
        grads.push((up - down) / (2.0 * h));
    }
    grads
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// log(softmax(logits)[index]) computed without forming intermediate ratios.
pub fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - max - log_sum
}

/// Numerically stable softplus, ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
