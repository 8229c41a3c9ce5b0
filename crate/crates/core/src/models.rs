//! Differentiable small models and the local trainer.
//!
//! A model is a fully-connected network described by [`MlpArchitecture`]
//! (two layer sizes give plain softmax regression) with parameters stored
//! flat: for each layer, weights in `[out][in]` row-major order followed
//! by the bias. Loss is mean cross-entropy with exact analytic gradients,
//! and [`local_train`] runs mini-batch SGD with classical momentum and an
//! optional proximal pull toward an anchor model.

use rand::distributions::Uniform;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Layer sizes from input dimension through hidden widths to class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl MlpArchitecture {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config("architecture needs at least input and output sizes".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must all be positive".into()));
        }
        Ok(Self { layer_sizes, activation })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total parameter count: `(in + 1) * out` summed over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    fn layers(&self) -> Vec<LayerSpan> {
        let mut spans = Vec::with_capacity(self.layer_sizes.len() - 1);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            spans.push(LayerSpan {
                fan_in,
                fan_out,
                weights: offset,
                biases: offset + fan_in * fan_out,
            });
            offset += (fan_in + 1) * fan_out;
        }
        spans
    }

    fn max_width(&self) -> usize {
        *self.layer_sizes.iter().max().unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub proximal_mu: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 50, lr: 0.01, momentum: 0.5, proximal_mu: 0.01 }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("trainer.epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("trainer.batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("trainer.lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("trainer.momentum must be in [0, 1)".into()));
        }
        if !(self.proximal_mu >= 0.0) {
            return Err(Error::Config("trainer.proximal_mu must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fan-in scaled symmetric uniform weights, zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.param_count()];
    for layer in arch.layers() {
        let bound = 1.0 / (layer.fan_in as f64).sqrt();
        let dist = Uniform::new(-bound, bound);
        for w in
            values[layer.weights..layer.weights + layer.fan_in * layer.fan_out].iter_mut()
        {
            *w = rng.sample(dist);
        }
        // Biases stay zero.
    }
    ParamVector::new(values).expect("uniform draws are finite")
}

/// Mean cross-entropy and its exact gradient over the given batch rows.
pub fn loss_and_grad(
    params: &ParamVector,
    arch: &MlpArchitecture,
    ds: &Dataset,
    batch: &[usize],
) -> Result<(f64, ParamVector)> {
    check_params(params, arch)?;
    check_data(arch, ds)?;
    let mut grad = vec![0.0; params.len()];
    let loss = accumulate_loss_grad(params.as_slice(), arch, ds, batch, &mut grad)?;
    Ok((loss, ParamVector::new(grad)?))
}

/// Mini-batch SGD with classical momentum over `cfg.epochs` passes of the
/// shard (fresh shuffle per epoch). With `proximal_mu > 0` every gradient
/// step is pulled toward `anchor` by `mu * (w - anchor)`. The velocity is
/// reset at the start of each call; the input vector is not modified.
pub fn local_train<R: Rng>(
    start: &ParamVector,
    arch: &MlpArchitecture,
    ds: &Dataset,
    shard: &[usize],
    cfg: &TrainerConfig,
    anchor: Option<&ParamVector>,
    rng: &mut R,
) -> Result<ParamVector> {
    check_params(start, arch)?;
    check_data(arch, ds)?;
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    let anchor_values = if cfg.proximal_mu > 0.0 {
        let anchor = anchor.ok_or_else(|| {
            Error::Config("proximal_mu > 0 requires an anchor model".into())
        })?;
        if anchor.len() != start.len() {
            return Err(Error::DimensionMismatch { left: anchor.len(), right: start.len() });
        }
        Some(anchor.as_slice())
    } else {
        None
    };

    let mut weights = start.as_slice().to_vec();
    let mut velocity = vec![0.0; weights.len()];
    let mut grad = vec![0.0; weights.len()];
    let mut order = shard.to_vec();

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            accumulate_loss_grad(&weights, arch, ds, batch, &mut grad)?;
            if let Some(anchor) = anchor_values {
                for ((g, &w), &a) in grad.iter_mut().zip(&weights).zip(anchor) {
                    *g += cfg.proximal_mu * (w - a);
                }
            }
            for ((w, v), &g) in weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *w += *v;
            }
        }
    }
    ParamVector::new(weights)
}

/// Accuracy (argmax ties resolved toward the lowest class index) and mean
/// cross-entropy over a whole dataset.
pub fn evaluate(
    params: &ParamVector,
    arch: &MlpArchitecture,
    ds: &Dataset,
) -> Result<(f64, f64)> {
    check_params(params, arch)?;
    check_data(arch, ds)?;
    let layers = arch.layers();
    let width = arch.max_width();
    let mut front = vec![0.0; width];
    let mut back = vec![0.0; width];
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for sample in 0..ds.len() {
        let logits = forward(params.as_slice(), &layers, arch.activation(), ds.feature_row(sample), &mut front, &mut back);
        let mut best = 0usize;
        for (o, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = o;
            }
        }
        if best == ds.label(sample) {
            correct += 1;
        }
        loss_sum += cross_entropy(logits, ds.label(sample));
    }
    let n = ds.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    Ok((correct as f64 / n, loss))
}

fn check_params(params: &ParamVector, arch: &MlpArchitecture) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            left: params.len(),
            right: arch.param_count(),
        });
    }
    Ok(())
}

fn check_data(arch: &MlpArchitecture, ds: &Dataset) -> Result<()> {
    if ds.dim() != arch.input_dim() {
        return Err(Error::DimensionMismatch { left: ds.dim(), right: arch.input_dim() });
    }
    if ds.num_classes() > arch.num_classes() {
        return Err(Error::DimensionMismatch {
            left: ds.num_classes(),
            right: arch.num_classes(),
        });
    }
    Ok(())
}

/// Runs the network on one sample. Returns the logits, which live in
/// either `front` or `back` depending on layer parity.
fn forward<'a>(
    params: &[f64],
    layers: &[LayerSpan],
    activation: Activation,
    input: &[f64],
    front: &'a mut [f64],
    back: &'a mut [f64],
) -> &'a [f64] {
    let num_layers = layers.len();
    let mut src_is_front = false; // the first layer reads `input` directly
    for (l, layer) in layers.iter().enumerate() {
        let (src, dst): (&[f64], &mut [f64]) = if src_is_front {
            (&front[..layer.fan_in], &mut back[..layer.fan_out])
        } else {
            (&back[..layer.fan_in], &mut front[..layer.fan_out])
        };
        let src = if l == 0 { input } else { src };
        for o in 0..layer.fan_out {
            let row = &params[layer.weights + o * layer.fan_in..layer.weights + (o + 1) * layer.fan_in];
            let mut z = params[layer.biases + o];
            for (w, x) in row.iter().zip(src) {
                z += w * x;
            }
            dst[o] = if l + 1 < num_layers { activation.apply(z) } else { z };
        }
        src_is_front = !src_is_front;
    }
    let out = layers.last().unwrap().fan_out;
    if src_is_front {
        &front[..out]
    } else {
        &back[..out]
    }
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - (logits[label] - max)
}

/// Accumulates the mean cross-entropy gradient of `batch` into `grad`
/// (overwriting it) and returns the mean loss.
fn accumulate_loss_grad(
    params: &[f64],
    arch: &MlpArchitecture,
    ds: &Dataset,
    batch: &[usize],
    grad: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let layers = arch.layers();
    let activation = arch.activation();
    let scale = 1.0 / batch.len() as f64;
    let width = arch.max_width();

    grad.fill(0.0);
    // Post-activation outputs per layer, reused across samples.
    let mut outputs: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
    let mut delta = vec![0.0; width];
    let mut delta_prev = vec![0.0; width];
    let mut loss_sum = 0.0;

    for &sample in batch {
        let input = ds.feature_row(sample);
        let label = ds.label(sample);

        for (l, layer) in layers.iter().enumerate() {
            let (before, rest) = outputs.split_at_mut(l);
            let src: &[f64] = if l == 0 { input } else { &before[l - 1] };
            let dst = &mut rest[0];
            for o in 0..layer.fan_out {
                let row = &params
                    [layer.weights + o * layer.fan_in..layer.weights + (o + 1) * layer.fan_in];
                let mut z = params[layer.biases + o];
                for (w, x) in row.iter().zip(src) {
                    z += w * x;
                }
                dst[o] = if l + 1 < layers.len() { activation.apply(z) } else { z };
            }
        }

        let logits = outputs.last().unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        loss_sum += exp_sum.ln() - (logits[label] - max);

        // Output delta: (softmax - one_hot) scaled by the batch mean.
        for (o, &z) in logits.iter().enumerate() {
            let p = (z - max).exp() / exp_sum;
            delta[o] = (p - if o == label { 1.0 } else { 0.0 }) * scale;
        }

        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let src: &[f64] = if l == 0 { input } else { &outputs[l - 1] };
            for o in 0..layer.fan_out {
                let d = delta[o];
                let row = &mut grad
                    [layer.weights + o * layer.fan_in..layer.weights + (o + 1) * layer.fan_in];
                for (g, x) in row.iter_mut().zip(src) {
                    *g += d * x;
                }
                grad[layer.biases + o] += d;
            }
            if l > 0 {
                for (i, dp) in delta_prev.iter_mut().enumerate().take(layer.fan_in) {
                    let mut sum = 0.0;
                    for o in 0..layer.fan_out {
                        sum += params[layer.weights + o * layer.fan_in + i] * delta[o];
                    }
                    *dp = sum * activation.grad_from_output(src[i]);
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }

    let loss = loss_sum * scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    Ok(loss)
}
