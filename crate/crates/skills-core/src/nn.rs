//! Minimal dense network with explicit forward/backward passes and Adam.
//!
//! Everything is `f64`; the nets involved are small enough that precision
//! beats speed, and double precision keeps finite-difference gradient
//! checks tight. Weights are row-major `(out_dim, in_dim)` so the forward
//! pass is a row dot product over contiguous slices.
//!
//! The hot path reuses caller-owned buffers (`ForwardCache`, `Gradients`)
//! so a training step performs no allocation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output-layer activation. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Tanh,
    /// Softmax fused with cross-entropy. `forward` returns probabilities;
    /// `backward` expects the gradient with respect to the output-layer
    /// *preactivation*, i.e. `probs - onehot` for a cross-entropy loss
    /// (see [`softmax_ce_loss`]).
    SoftmaxCrossEntropy,
}

/// A fully connected feed-forward net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// Per layer, row-major `(layer_sizes[l+1], layer_sizes[l])`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

/// Per-layer preactivations and activations from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l+1]` the output of layer l.
    activations: Vec<Vec<f64>>,
    preactivations: Vec<Vec<f64>>,
    /// Shape signature of the net that produced this cache.
    shape: Vec<usize>,
}

/// Parameter gradients, same shapes as the net (overwrite-or-accumulate
/// semantics are chosen by the caller via [`Gradients::zero`]).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform initialization: uniform in `±sqrt(6/(fan_in+fan_out))`.
    pub fn new<R: Rng>(
        layer_sizes: &[usize],
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, output_activation)?;
        for l in 0..net.num_layers() {
            let (fan_out, fan_in) = (layer_sizes[l + 1], layer_sizes[l]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in net.weights[l].iter_mut() {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], output_activation: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::contract("need at least an input and output layer"));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::contract("layer sizes must be positive"));
        }
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l + 1] * layer_sizes[l]])
            .collect();
        let biases = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l + 1]])
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// True if every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Forward pass. The returned slice (borrowed from `cache`) is the
    /// network output; for `SoftmaxCrossEntropy` it is the probability
    /// vector.
    pub fn forward<'c>(&self, input: &[f64], cache: &'c mut ForwardCache) -> Result<&'c [f64]> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input length {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        cache.resize_for(&self.layer_sizes);
        cache.activations[0].copy_from_slice(input);

        for l in 0..self.num_layers() {
            let in_dim = self.layer_sizes[l];
            let out_dim = self.layer_sizes[l + 1];
            let last = l + 1 == self.num_layers();
            let (head, tail) = cache.activations.split_at_mut(l + 1);
            let x = head[l].as_slice();
            let z = &mut cache.preactivations[l];
            let y = &mut tail[0];
            for o in 0..out_dim {
                let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                let mut acc = self.biases[l][o];
                for i in 0..in_dim {
                    acc += row[i] * x[i];
                }
                z[o] = acc;
            }
            if last {
                match self.output_activation {
                    OutputActivation::Linear => y.copy_from_slice(z),
                    OutputActivation::Tanh => {
                        for o in 0..out_dim {
                            y[o] = z[o].tanh();
                        }
                    }
                    OutputActivation::SoftmaxCrossEntropy => {
                        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for o in 0..out_dim {
                            y[o] = (z[o] - max).exp();
                            sum += y[o];
                        }
                        for v in y.iter_mut() {
                            *v /= sum;
                        }
                    }
                }
            } else {
                for o in 0..out_dim {
                    y[o] = z[o].max(0.0);
                }
            }
        }
        Ok(cache.output())
    }

    /// Backward pass; accumulates into `grads` (call [`Gradients::zero`]
    /// first for a fresh gradient) and writes the input gradient into
    /// `d_input` when provided.
    ///
    /// `output_gradient` is the loss gradient with respect to the network
    /// output, except for `SoftmaxCrossEntropy` where it is the gradient
    /// with respect to the output preactivation (`probs - onehot`).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_gradient: &[f64],
        grads: &mut Gradients,
        mut d_input: Option<&mut [f64]>,
    ) -> Result<()> {
        if cache.shape != self.layer_sizes {
            return Err(Error::contract("cache does not match this net"));
        }
        if output_gradient.len() != self.output_dim() {
            return Err(Error::contract("output gradient length mismatch"));
        }
        if grads.d_weights.len() != self.num_layers() {
            return Err(Error::contract("gradient shape mismatch"));
        }

        // delta = dL/dz for the current layer.
        let mut delta = output_gradient.to_vec();
        match self.output_activation {
            OutputActivation::Linear | OutputActivation::SoftmaxCrossEntropy => {}
            OutputActivation::Tanh => {
                let y = cache.output();
                for (d, &yo) in delta.iter_mut().zip(y) {
                    *d *= 1.0 - yo * yo;
                }
            }
        }

        let mut next_delta = Vec::new();
        for l in (0..self.num_layers()).rev() {
            let in_dim = self.layer_sizes[l];
            let out_dim = self.layer_sizes[l + 1];
            let x = &cache.activations[l];

            for o in 0..out_dim {
                let d = delta[o];
                grads.d_biases[l][o] += d;
                let row = &mut grads.d_weights[l][o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    row[i] += d * x[i];
                }
            }

            let need_dx = l > 0 || d_input.is_some();
            if need_dx {
                next_delta.clear();
                next_delta.resize(in_dim, 0.0);
                for o in 0..out_dim {
                    let d = delta[o];
                    let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        next_delta[i] += d * row[i];
                    }
                }
                if l > 0 {
                    // ReLU gate of the layer below.
                    let z_prev = &cache.preactivations[l - 1];
                    for i in 0..in_dim {
                        if z_prev[i] <= 0.0 {
                            next_delta[i] = 0.0;
                        }
                    }
                }
                std::mem::swap(&mut delta, &mut next_delta);
            }
        }
        if let Some(dx) = d_input.as_deref_mut() {
            dx.copy_from_slice(&delta);
        }
        Ok(())
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            d_weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Mutable parameter access for the optimizer and tests.
    pub fn params_mut(&mut self) -> (&mut Vec<Vec<f64>>, &mut Vec<Vec<f64>>) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn params(&self) -> (&Vec<Vec<f64>>, &Vec<Vec<f64>>) {
        (&self.weights, &self.biases)
    }

    /// Polyak mix: `self = tau * source + (1 - tau) * self`.
    pub fn mix_from(&mut self, source: &Mlp, tau: f64) {
        debug_assert_eq!(self.layer_sizes, source.layer_sizes);
        for (t, s) in self.weights.iter_mut().zip(&source.weights) {
            for (tv, sv) in t.iter_mut().zip(s) {
                *tv += tau * (*sv - *tv);
            }
        }
        for (t, s) in self.biases.iter_mut().zip(&source.biases) {
            for (tv, sv) in t.iter_mut().zip(s) {
                *tv += tau * (*sv - *tv);
            }
        }
    }
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn resize_for(&mut self, layer_sizes: &[usize]) {
        if self.shape != layer_sizes {
            self.shape = layer_sizes.to_vec();
            self.activations = layer_sizes.iter().map(|&n| vec![0.0; n]).collect();
            self.preactivations = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        }
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Gradients {
    pub fn zero(&mut self) {
        for v in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= c);
        }
    }
}

/// Cross-entropy loss for a fused softmax head: returns the loss and the
/// preactivation gradient `probs - onehot(label)`.
pub fn softmax_ce_loss(probs: &[f64], label: usize, delta: &mut [f64]) -> f64 {
    debug_assert!(label < probs.len());
    delta.copy_from_slice(probs);
    delta[label] -= 1.0;
    -(probs[label].max(1e-300)).ln()
}

/// Bias-corrected adaptive-moment optimizer state; `m`/`v` mirror the
/// parameter shapes of the net it was built for.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let g = net.gradients();
        AdamState {
            m_weights: g.d_weights.clone(),
            v_weights: g.d_weights.clone(),
            m_biases: g.d_biases.clone(),
            v_biases: g.d_biases,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    /// One optimizer step over all parameters of `net`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if self.m_weights.len() != grads.d_weights.len() {
            return Err(Error::contract("optimizer/gradient shape mismatch"));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (weights, biases) = net.params_mut();

        let update = |params: &mut [Vec<f64>],
                          grads: &[Vec<f64>],
                          m: &mut [Vec<f64>],
                          v: &mut [Vec<f64>]|
         -> Result<()> {
            for l in 0..params.len() {
                if params[l].len() != grads[l].len() {
                    return Err(Error::contract("optimizer/gradient shape mismatch"));
                }
                let (p, g, m, v) = (&mut params[l], &grads[l], &mut m[l], &mut v[l]);
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
            Ok(())
        };
        update(
            weights,
            &grads.d_weights,
            &mut self.m_weights,
            &mut self.v_weights,
        )?;
        update(
            biases,
            &grads.d_biases,
            &mut self.m_biases,
            &mut self.v_biases,
        )?;
        Ok(())
    }
}

/// Loss used by [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTag {
    MeanSquaredError,
    CrossEntropy,
}

/// Compares analytic gradients against central finite differences on
/// `samples` randomly chosen parameters and returns the max relative
/// error `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check<R: Rng>(
    net: &Mlp,
    loss: LossTag,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let input: Vec<f64> = (0..net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let out_dim = net.output_dim();
    let (target_vec, label) = match loss {
        LossTag::MeanSquaredError => (
            (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
            0,
        ),
        LossTag::CrossEntropy => (Vec::new(), rng.gen_range(0..out_dim)),
    };

    let eval = |net: &Mlp, cache: &mut ForwardCache| -> Result<f64> {
        let y = net.forward(&input, cache)?;
        Ok(match loss {
            LossTag::MeanSquaredError => {
                y.iter().zip(&target_vec).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 0.5
            }
            LossTag::CrossEntropy => -(y[label].max(1e-300)).ln(),
        })
    };

    // Analytic gradient.
    let mut cache = ForwardCache::new();
    let y = net.forward(&input, &mut cache)?.to_vec();
    let mut delta = vec![0.0; out_dim];
    match loss {
        LossTag::MeanSquaredError => {
            if net.output_activation() == OutputActivation::SoftmaxCrossEntropy {
                return Err(Error::contract(
                    "mean-squared-error check requires a linear or tanh head",
                ));
            }
            for o in 0..out_dim {
                delta[o] = y[o] - target_vec[o];
            }
        }
        LossTag::CrossEntropy => {
            if net.output_activation() != OutputActivation::SoftmaxCrossEntropy {
                return Err(Error::contract(
                    "cross-entropy check requires a softmax head",
                ));
            }
            softmax_ce_loss(&y, label, &mut delta);
        }
    }
    let mut grads = net.gradients();
    grads.zero();
    net.backward(&cache, &delta, &mut grads, None)?;

    let num_layers = net.layer_sizes().len() - 1;
    let mut max_err = 0.0f64;
    let eps = 1e-5;
    let mut work = net.clone();
    for _ in 0..samples {
        let l = rng.gen_range(0..num_layers);
        let is_weight = rng.gen_bool(0.9);
        let (analytic, idx) = if is_weight {
            let idx = rng.gen_range(0..grads.d_weights[l].len());
            (grads.d_weights[l][idx], idx)
        } else {
            let idx = rng.gen_range(0..grads.d_biases[l].len());
            (grads.d_biases[l][idx], idx)
        };
        let numeric = {
            let orig = {
                let (w, b) = work.params();
                if is_weight { w[l][idx] } else { b[l][idx] }
            };
            let set = |net: &mut Mlp, val: f64| {
                let (w, b) = net.params_mut();
                if is_weight {
                    w[l][idx] = val;
                } else {
                    b[l][idx] = val;
                }
            };
            set(&mut work, orig + eps);
            let plus = eval(&work, &mut cache)?;
            set(&mut work, orig - eps);
            let minus = eval(&work, &mut cache)?;
            set(&mut work, orig);
            (plus - minus) / (2.0 * eps)
        };
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
