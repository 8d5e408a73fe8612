//! A feedforward network written from scratch: sigmoid hidden layers, a
//! linear output layer feeding softmax, cross-entropy loss and plain SGD with
//! L2 on the weights.
//!
//! Nothing here is automatic differentiation. The point of the hand-coded
//! derivatives is the two-term split of every batch gradient: because the
//! loss depends on any weight only through the pre-softmax outputs `z`, the
//! gradient of each weight block is
//!
//! ```text
//! (1/|B|) sum_s sum_i p_i(s) dz_i(s)/dw  -  (1/|B|) sum_s sum_i y_i(s) dz_i(s)/dw
//! ```
//!
//! where the first term never touches labels and the second is linear in the
//! one-hot labels, so it can be evaluated under a linearly homomorphic
//! encryption of `y`. [`full_z_grads`] exposes the per-sample, per-class
//! derivative vectors this split needs, for every layer; [`p_term`],
//! [`y_term_clear`] and [`assemble_gradient`] are the two halves and their
//! recombination. [`hidden_grads`] is the classic delta-rule backpropagation
//! path, kept as an independent route for cross-checking.
//!
//! All functions are pure; training and gradient sums run in a fixed
//! left-to-right order, so identical seeds give bitwise identical parameter
//! trajectories.

use rand::Rng;
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::{rng_streams, seeded_rng};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("empty batch or dataset")]
    Empty,
    #[error("malformed parameter blob: {0}")]
    Malformed(String),
}

/// Layer widths, input first, classes last.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self, NnError> {
        if sizes.len() < 2 {
            return Err(NnError::InvalidSpec(
                "need at least input and output widths".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(NnError::InvalidSpec("zero-width layer".into()));
        }
        Ok(LayerSpec { sizes })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Widths `[d_in, hidden.., K]` from a hidden-layer list.
    pub fn with_hidden(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Self, NnError> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        LayerSpec::new(sizes)
    }
}

/// One dense layer, row-major `out x in` weights. The output layer of a
/// network carries no bias (`bias` empty); hidden layers do.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable values of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: LayerSpec,
    layers: Vec<DenseLayer>,
}

const PARAMS_MAGIC: [u8; 4] = *b"NNP1";

impl NetworkParams {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Total number of trainable values: all weights plus hidden biases,
    /// laid out layer by layer (weights row-major, then bias).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Rebuilds a network from [`Self::flatten`]'s layout for the given spec.
    pub fn from_flat(spec: &LayerSpec, values: &[f64]) -> Result<NetworkParams, NnError> {
        let mut params = init_params(spec, 0)?;
        if values.len() != params.param_count() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a network of {} parameters",
                values.len(),
                params.param_count()
            )));
        }
        let mut off = 0;
        for layer in &mut params.layers {
            let weight_len = layer.weights.len();
            layer.weights.copy_from_slice(&values[off..off + weight_len]);
            off += weight_len;
            let bias_len = layer.bias.len();
            layer.bias.copy_from_slice(&values[off..off + bias_len]);
            off += bias_len;
        }
        Ok(params)
    }

    /// Versioned binary blob: 4-byte magic, layer count, per-layer shapes,
    /// then all values as 8-byte little-endian IEEE-754.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&PARAMS_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
            out.push(u8::from(!layer.bias.is_empty()));
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<NetworkParams, NnError> {
        let take = |off: usize, len: usize| -> Result<&[u8], NnError> {
            bytes
                .get(off..off + len)
                .ok_or_else(|| NnError::Malformed("truncated".into()))
        };
        if take(0, 4)? != PARAMS_MAGIC {
            return Err(NnError::Malformed("bad magic".into()));
        }
        let count = u32::from_le_bytes(take(4, 4)?.try_into().unwrap()) as usize;
        let mut shapes = Vec::with_capacity(count);
        let mut off = 8;
        for _ in 0..count {
            let out_dim = u32::from_le_bytes(take(off, 4)?.try_into().unwrap()) as usize;
            let in_dim = u32::from_le_bytes(take(off + 4, 4)?.try_into().unwrap()) as usize;
            let has_bias = take(off + 8, 1)?[0] != 0;
            shapes.push((out_dim, in_dim, has_bias));
            off += 9;
        }
        let mut layers = Vec::with_capacity(count);
        let read_f64 = |off: &mut usize| -> Result<f64, NnError> {
            let v = f64::from_le_bytes(take(*off, 8)?.try_into().unwrap());
            *off += 8;
            Ok(v)
        };
        for (out_dim, in_dim, has_bias) in &shapes {
            let mut weights = Vec::with_capacity(out_dim * in_dim);
            for _ in 0..out_dim * in_dim {
                weights.push(read_f64(&mut off)?);
            }
            let mut bias = Vec::new();
            if *has_bias {
                for _ in 0..*out_dim {
                    bias.push(read_f64(&mut off)?);
                }
            }
            layers.push(DenseLayer {
                out_dim: *out_dim,
                in_dim: *in_dim,
                weights,
                bias,
            });
        }
        if off != bytes.len() {
            return Err(NnError::Malformed("trailing bytes".into()));
        }
        let mut sizes = vec![layers.first().map_or(0, |l| l.in_dim)];
        sizes.extend(layers.iter().map(|l| l.out_dim));
        Ok(NetworkParams {
            spec: LayerSpec::new(sizes)?,
            layers,
        })
    }
}

/// Glorot-uniform weights, zero biases, deterministic per seed. The output
/// layer gets no bias.
pub fn init_params(spec: &LayerSpec, seed: u64) -> Result<NetworkParams, NnError> {
    LayerSpec::new(spec.sizes.clone())?;
    let mut rng = seeded_rng(seed, rng_streams::INIT);
    let count = spec.sizes.len() - 1;
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let (in_dim, out_dim) = (spec.sizes[l], spec.sizes[l + 1]);
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| rng.random::<f64>() * 2.0 * limit - limit)
            .collect();
        let bias = if l + 1 == count {
            Vec::new()
        } else {
            vec![0.0; out_dim]
        };
        layers.push(DenseLayer {
            out_dim,
            in_dim,
            weights,
            bias,
        });
    }
    Ok(NetworkParams {
        spec: spec.clone(),
        layers,
    })
}

/// Overflow-free logistic function: for non-negative inputs evaluate
/// `1 / (1 + e^-x)`, otherwise `e^x / (1 + e^x)`.
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Everything a backward pass needs from one sample's forward pass:
/// the input, each hidden layer's post-sigmoid output, the pre-softmax
/// outputs `z` and the softmax probabilities `p`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

pub fn forward(params: &NetworkParams, features: &[f64]) -> Result<ForwardTrace, NnError> {
    if features.len() != params.spec.input_dim() {
        return Err(NnError::ShapeMismatch(format!(
            "{} features for input width {}",
            features.len(),
            params.spec.input_dim()
        )));
    }
    let mut activations = vec![features.to_vec()];
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let input = activations.last().unwrap();
        let mut out = Vec::with_capacity(layer.out_dim);
        for r in 0..layer.out_dim {
            let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
            let mut h: f64 = row.iter().zip(input).map(|(w, a)| w * a).sum();
            if !layer.bias.is_empty() {
                h += layer.bias[r];
            }
            out.push(if l == last { h } else { stable_sigmoid(h) });
        }
        if l == last {
            let p = softmax(&out);
            debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            return Ok(ForwardTrace {
                activations,
                z: out,
                p,
            });
        }
        activations.push(out);
    }
    unreachable!("layer list is never empty")
}

pub fn forward_batch(
    params: &NetworkParams,
    features: &[Vec<f64>],
) -> Result<Vec<ForwardTrace>, NnError> {
    features.iter().map(|f| forward(params, f)).collect()
}

pub fn one_hot(classes: usize, label: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Cross-entropy of a trace against a one-hot label, with the probability
/// clamped at `1e-15` so the loss stays finite.
pub fn cross_entropy(trace: &ForwardTrace, one_hot_label: &[f64]) -> f64 {
    trace
        .p
        .iter()
        .zip(one_hot_label)
        .map(|(&p, &y)| if y > 0.0 { -y * p.max(1e-15).ln() } else { 0.0 })
        .sum()
}

/// Per-sample, per-class derivative vectors `dz_i(s)/dw`, flattened over a
/// contiguous block of coordinates.
#[derive(Debug, Clone)]
pub struct ZGradients {
    samples: usize,
    pub classes: usize,
    pub coords: usize,
    data: Vec<f64>,
}

impl ZGradients {
    fn zeroed(samples: usize, classes: usize, coords: usize) -> ZGradients {
        ZGradients {
            samples,
            classes,
            coords,
            data: vec![0.0; samples * classes * coords],
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn grad(&self, sample: usize, class: usize) -> &[f64] {
        let start = (sample * self.classes + class) * self.coords;
        &self.data[start..start + self.coords]
    }

    fn grad_mut(&mut self, sample: usize, class: usize) -> &mut [f64] {
        let start = (sample * self.classes + class) * self.coords;
        &mut self.data[start..start + self.coords]
    }

    /// Largest Euclidean norm over all `(sample, class)` rows.
    pub fn max_row_norm(&self) -> f64 {
        let mut max = 0.0f64;
        for s in 0..self.samples {
            for i in 0..self.classes {
                let norm = self.grad(s, i).iter().map(|g| g * g).sum::<f64>().sqrt();
                max = max.max(norm);
            }
        }
        max
    }
}

/// Derivatives of the pre-softmax outputs with respect to the output-layer
/// weights only: `dz_i/dw_kj = a_j` if `i = k`, else zero.
pub fn last_layer_z_grads(traces: &[ForwardTrace]) -> ZGradients {
    let classes = traces.first().map_or(0, |t| t.z.len());
    let hidden = traces.first().map_or(0, |t| t.activations.last().unwrap().len());
    let coords = classes * hidden;
    let mut zg = ZGradients::zeroed(traces.len(), classes, coords);
    for (s, trace) in traces.iter().enumerate() {
        let a = trace.activations.last().unwrap();
        for i in 0..classes {
            zg.grad_mut(s, i)[i * hidden..(i + 1) * hidden].copy_from_slice(a);
        }
    }
    zg
}

/// Derivatives of the pre-softmax outputs with respect to every trainable
/// value in the network, per sample and class: one backward pass is seeded
/// from each `z_i` and chained through the sigmoid layers.
pub fn full_z_grads(params: &NetworkParams, traces: &[ForwardTrace]) -> ZGradients {
    let classes = params.spec.classes();
    let coords = params.param_count();
    let mut zg = ZGradients::zeroed(traces.len(), classes, coords);

    // Flat offsets of each layer block (weights, then bias).
    let mut offsets = Vec::with_capacity(params.layers.len());
    let mut off = 0;
    for layer in &params.layers {
        offsets.push(off);
        off += layer.weights.len() + layer.bias.len();
    }
    let out_idx = params.layers.len() - 1;
    let out_layer = &params.layers[out_idx];

    for (s, trace) in traces.iter().enumerate() {
        for i in 0..classes {
            let g = zg.grad_mut(s, i);
            let a_last = trace.activations.last().unwrap();
            let block = offsets[out_idx] + i * out_layer.in_dim;
            g[block..block + out_layer.in_dim].copy_from_slice(a_last);

            // d z_i / d a for the layer below the output.
            let mut d_a: Vec<f64> = out_layer.weights
                [i * out_layer.in_dim..(i + 1) * out_layer.in_dim]
                .to_vec();
            for l in (0..out_idx).rev() {
                let layer = &params.layers[l];
                let act = &trace.activations[l + 1];
                let input = &trace.activations[l];
                let mut d_prev = vec![0.0; layer.in_dim];
                let base = offsets[l];
                for r in 0..layer.out_dim {
                    let dh = d_a[r] * act[r] * (1.0 - act[r]);
                    let row = base + r * layer.in_dim;
                    for c in 0..layer.in_dim {
                        g[row + c] = dh * input[c];
                        d_prev[c] += layer.weights[r * layer.in_dim + c] * dh;
                    }
                    g[base + layer.out_dim * layer.in_dim + r] = dh;
                }
                d_a = d_prev;
            }
        }
    }
    zg
}

/// The label-free half of the batch gradient:
/// `(1/|B|) sum_s sum_i p_i(s) * g(s, i)`.
pub fn p_term(traces: &[ForwardTrace], zg: &ZGradients) -> Vec<f64> {
    let mut acc = vec![0.0; zg.coords];
    for (s, trace) in traces.iter().enumerate() {
        for i in 0..zg.classes {
            let p = trace.p[i];
            for (a, g) in acc.iter_mut().zip(zg.grad(s, i)) {
                *a += p * g;
            }
        }
    }
    let inv = 1.0 / traces.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// The label-dependent half of the batch gradient, kept unnormalized so the
/// encrypted pipeline and the privacy accounting can share it.
#[derive(Debug, Clone, PartialEq)]
pub struct YTerm {
    /// `sum_s sum_i y_i(s) * g(s, i)` without the `1/|B|` factor.
    pub raw: Vec<f64>,
    pub batch_size: usize,
}

impl YTerm {
    pub fn normalized(&self) -> Vec<f64> {
        let inv = 1.0 / self.batch_size as f64;
        self.raw.iter().map(|v| v * inv).collect()
    }
}

/// Clear-label evaluation of the y-term; the one-hot structure collapses the
/// inner sum to the labelled class.
pub fn y_term_clear(labels: &[usize], zg: &ZGradients) -> YTerm {
    let mut raw = vec![0.0; zg.coords];
    for (s, &label) in labels.iter().enumerate() {
        for (a, g) in raw.iter_mut().zip(zg.grad(s, label)) {
            *a += g;
        }
    }
    YTerm {
        raw,
        batch_size: labels.len(),
    }
}

/// `p_term - y_term`, the full batch gradient of the cross-entropy loss.
pub fn assemble_gradient(p_term: &[f64], y_term: &[f64]) -> Result<Vec<f64>, NnError> {
    if p_term.len() != y_term.len() {
        return Err(NnError::ShapeMismatch(format!(
            "p-term has {} coordinates, y-term {}",
            p_term.len(),
            y_term.len()
        )));
    }
    Ok(p_term.iter().zip(y_term).map(|(p, y)| p - y).collect())
}

/// Delta-rule backpropagation for the layers below the output, averaged over
/// the batch, plus `l2 * w` on the hidden weights when requested. Output-layer
/// coordinates are left at zero; combine with [`assemble_gradient`]'s result
/// for that block.
pub fn hidden_grads(
    params: &NetworkParams,
    traces: &[ForwardTrace],
    deltas: &[Vec<f64>],
    l2: f64,
) -> Vec<f64> {
    let coords = params.param_count();
    let mut acc = vec![0.0; coords];
    let mut offsets = Vec::with_capacity(params.layers.len());
    let mut off = 0;
    for layer in &params.layers {
        offsets.push(off);
        off += layer.weights.len() + layer.bias.len();
    }
    let out_idx = params.layers.len() - 1;
    let out_layer = &params.layers[out_idx];

    for (trace, delta) in traces.iter().zip(deltas) {
        // d L / d a at the layer below the output: W_out^T * delta.
        let mut d_a = vec![0.0; out_layer.in_dim];
        for (i, &d) in delta.iter().enumerate() {
            for c in 0..out_layer.in_dim {
                d_a[c] += out_layer.weights[i * out_layer.in_dim + c] * d;
            }
        }
        for l in (0..out_idx).rev() {
            let layer = &params.layers[l];
            let act = &trace.activations[l + 1];
            let input = &trace.activations[l];
            let mut d_prev = vec![0.0; layer.in_dim];
            let base = offsets[l];
            for r in 0..layer.out_dim {
                let dh = d_a[r] * act[r] * (1.0 - act[r]);
                for c in 0..layer.in_dim {
                    acc[base + r * layer.in_dim + c] += dh * input[c];
                    d_prev[c] += layer.weights[r * layer.in_dim + c] * dh;
                }
                acc[base + layer.out_dim * layer.in_dim + r] += dh;
            }
            d_a = d_prev;
        }
    }
    let inv = 1.0 / traces.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    if l2 != 0.0 {
        for (l, layer) in params.layers.iter().enumerate().take(out_idx) {
            let base = offsets[l];
            for (k, w) in layer.weights.iter().enumerate() {
                acc[base + k] += l2 * w;
            }
        }
    }
    acc
}

/// The classic single-route batch gradient (per-sample deltas `p - y`
/// backpropagated), used as an independent cross-check of the two-term path.
pub fn direct_gradient(
    params: &NetworkParams,
    traces: &[ForwardTrace],
    labels: &[usize],
) -> Vec<f64> {
    let classes = params.spec.classes();
    let deltas: Vec<Vec<f64>> = traces
        .iter()
        .zip(labels)
        .map(|(t, &label)| {
            t.p.iter()
                .enumerate()
                .map(|(i, &p)| p - if i == label { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut grad = hidden_grads(params, traces, &deltas, 0.0);
    // Output block: mean of outer(delta, a_last).
    let out_idx = params.layers.len() - 1;
    let out_layer = &params.layers[out_idx];
    let base = grad.len() - out_layer.weights.len();
    let inv = 1.0 / traces.len() as f64;
    for (trace, delta) in traces.iter().zip(&deltas) {
        let a_last = trace.activations.last().unwrap();
        for i in 0..classes {
            for (c, &a) in a_last.iter().enumerate() {
                grad[base + i * out_layer.in_dim + c] += inv * delta[i] * a;
            }
        }
    }
    grad
}

/// One SGD step: `w <- w - lr * (grad + l2 * w)`; biases are excluded from
/// the L2 term. Rejects non-finite gradients so numeric blow-ups abort
/// training instead of propagating.
pub fn sgd_step(
    params: &NetworkParams,
    gradient: &[f64],
    learning_rate: f64,
    l2: f64,
) -> Result<NetworkParams, NnError> {
    if learning_rate <= 0.0 {
        return Err(NnError::InvalidHyper(format!(
            "learning rate {learning_rate} must be positive"
        )));
    }
    if gradient.len() != params.param_count() {
        return Err(NnError::ShapeMismatch(format!(
            "gradient has {} coordinates, network {}",
            gradient.len(),
            params.param_count()
        )));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteGradient);
    }
    let mut layers = params.layers.clone();
    let mut off = 0;
    for layer in &mut layers {
        for w in &mut layer.weights {
            *w -= learning_rate * (gradient[off] + l2 * *w);
            off += 1;
        }
        for b in &mut layer.bias {
            *b -= learning_rate * gradient[off];
            off += 1;
        }
    }
    Ok(NetworkParams {
        spec: params.spec.clone(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.1,
            l2: 0.01,
        }
    }
}

/// Plaintext SGD training. Batches come from a fresh seeded shuffle each
/// epoch; the last partial batch is trained on. The gradient is computed via
/// the two-term split so that the encrypted pipeline follows the same
/// floating-point path.
pub fn train_plaintext(
    dataset: &LabeledDataset,
    spec: &LayerSpec,
    config: &TrainConfig,
    seed: u64,
) -> Result<NetworkParams, NnError> {
    if dataset.is_empty() {
        return Err(NnError::Empty);
    }
    if config.batch_size == 0 {
        return Err(NnError::InvalidHyper("batch size 0".into()));
    }
    if dataset.dim() != spec.input_dim() || dataset.classes != spec.classes() {
        return Err(NnError::ShapeMismatch(format!(
            "dataset {}x{}c vs spec {:?}",
            dataset.dim(),
            dataset.classes,
            spec.sizes
        )));
    }
    let mut params = init_params(spec, seed)?;
    let mut shuffle_rng = seeded_rng(seed, rng_streams::SHUFFLE);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let features: Vec<Vec<f64>> =
                chunk.iter().map(|&i| dataset.features[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            let traces = forward_batch(&params, &features)?;
            let zg = full_z_grads(&params, &traces);
            let p = p_term(&traces, &zg);
            let y = y_term_clear(&labels, &zg);
            let grad = assemble_gradient(&p, &y.normalized())?;
            params = sgd_step(&params, &grad, config.learning_rate, config.l2)?;
        }
    }
    Ok(params)
}

/// Fraction of samples whose argmax class matches the label; argmax ties
/// break toward the lowest class index.
pub fn evaluate(params: &NetworkParams, dataset: &LabeledDataset) -> Result<f64, NnError> {
    if dataset.is_empty() {
        return Err(NnError::Empty);
    }
    let mut correct = 0usize;
    for (features, &label) in dataset.features.iter().zip(&dataset.labels) {
        let trace = forward(params, features)?;
        let mut best = 0usize;
        for (i, &p) in trace.p.iter().enumerate() {
            if p > trace.p[best] {
                best = i;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params() -> NetworkParams {
        init_params(&LayerSpec::new(vec![3, 4, 2]).unwrap(), 42).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_glorot_bounded() {
        let spec = LayerSpec::new(vec![4, 4, 3]).unwrap();
        let a = init_params(&spec, 1).unwrap();
        let b = init_params(&spec, 1).unwrap();
        assert_eq!(a, b);
        let c = init_params(&spec, 2).unwrap();
        assert_ne!(a, c);

        for layer in a.layers() {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= limit));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        // Output layer carries no bias.
        assert!(a.layers().last().unwrap().bias.is_empty());
        assert_eq!(a.param_count(), 4 * 4 + 4 + 3 * 4);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(stable_sigmoid(0.0), 0.5);
        let tiny = stable_sigmoid(-1e4);
        assert!(tiny >= 0.0 && tiny < 1e-100);
        assert!(stable_sigmoid(1e4) <= 1.0);
        let mut rng = crate::seeded_rng(1, 99);
        for _ in 0..1000 {
            let x = (rand::Rng::random::<f64>(&mut rng) - 0.5) * 60.0;
            let s = stable_sigmoid(x) + stable_sigmoid(-x);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[0.3 + 17.5, -1.2 + 17.5, 2.0 + 17.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_checks_shapes_and_batches_consistently() {
        let params = toy_params();
        assert!(matches!(
            forward(&params, &[1.0, 2.0]),
            Err(NnError::ShapeMismatch(_))
        ));
        let rows = vec![vec![0.1, -0.2, 0.4], vec![1.0, 0.0, -1.0]];
        let batch = forward_batch(&params, &rows).unwrap();
        let single = forward(&params, &rows[1]).unwrap();
        assert_eq!(batch[1].p, single.p);
        assert_eq!(batch[1].z, single.z);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = ForwardTrace {
            activations: vec![],
            z: vec![0.0; 3],
            p: vec![1.0 / 3.0; 3],
        };
        assert!((cross_entropy(&uniform, &one_hot(3, 1)) - 3.0f64.ln()).abs() < 1e-12);

        let perfect = ForwardTrace {
            activations: vec![],
            z: vec![],
            p: vec![1.0, 0.0, 0.0],
        };
        assert_eq!(cross_entropy(&perfect, &one_hot(3, 0)), 0.0);
        // Zero probability on the labelled class stays finite via the clamp.
        assert!(cross_entropy(&perfect, &one_hot(3, 1)).is_finite());

        let skewed = ForwardTrace {
            activations: vec![],
            z: vec![],
            p: vec![0.7, 0.2, 0.1],
        };
        assert!((cross_entropy(&skewed, &one_hot(3, 0)) - 0.35667494393873245).abs() < 1e-12);
    }

    #[test]
    fn last_layer_grads_sparsity() {
        let trace = ForwardTrace {
            activations: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            z: vec![0.1, -0.1],
            p: vec![0.55, 0.45],
        };
        let zg = last_layer_z_grads(std::slice::from_ref(&trace));
        assert_eq!(zg.grad(0, 0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(zg.grad(0, 1), &[0.0, 0.0, 1.0, 0.0]);

        let zeroed = ForwardTrace {
            activations: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            ..trace
        };
        let zg = last_layer_z_grads(std::slice::from_ref(&zeroed));
        assert!(zg.grad(0, 0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn full_z_grads_match_last_layer_block() {
        let params = toy_params();
        let trace = forward(&params, &[0.3, -0.1, 0.8]).unwrap();
        let traces = vec![trace];
        let full = full_z_grads(&params, &traces);
        let last = last_layer_z_grads(&traces);
        let offset = full.coords - last.coords;
        for i in 0..2 {
            assert_eq!(&full.grad(0, i)[offset..], last.grad(0, i));
        }
    }

    #[test]
    fn p_term_degenerate_softmax_and_mean_invariance() {
        let params = toy_params();
        let rows = vec![vec![0.2, 0.1, -0.4], vec![-1.0, 0.5, 0.3]];
        let mut traces = forward_batch(&params, &rows).unwrap();
        let zg = full_z_grads(&params, &traces);

        // Degenerate softmax p = (1, 0) reduces the p-term to dz_0/dw.
        traces[0].p = vec![1.0, 0.0];
        let single = p_term(&traces[..1], &full_z_grads(&params, &traces[..1]));
        assert_eq!(single, zg.grad(0, 0));

        // Duplicating every sample leaves the mean unchanged.
        let traces = forward_batch(&params, &rows).unwrap();
        let doubled_rows: Vec<Vec<f64>> = rows.iter().chain(rows.iter()).cloned().collect();
        let doubled = forward_batch(&params, &doubled_rows).unwrap();
        let a = p_term(&traces, &full_z_grads(&params, &traces));
        let b = p_term(&doubled, &full_z_grads(&params, &doubled));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn y_term_one_hot_collapse() {
        let params = toy_params();
        let rows = vec![vec![0.2, 0.1, -0.4], vec![-1.0, 0.5, 0.3]];
        let traces = forward_batch(&params, &rows).unwrap();
        let zg = full_z_grads(&params, &traces);
        let labels = vec![1usize, 1];
        let y = y_term_clear(&labels, &zg);
        // Generic sum with one-hot weights, written out the long way.
        let mut expected = vec![0.0; zg.coords];
        for s in 0..2 {
            for i in 0..2 {
                let w = if i == labels[s] { 1.0 } else { 0.0 };
                for (e, g) in expected.iter_mut().zip(zg.grad(s, i)) {
                    *e += w * g;
                }
            }
        }
        assert_eq!(y.raw, expected);
        let norm = y.normalized();
        for (n, r) in norm.iter().zip(&y.raw) {
            assert!((n - r / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn assemble_gradient_contract() {
        assert!(matches!(
            assemble_gradient(&[1.0], &[1.0, 2.0]),
            Err(NnError::ShapeMismatch(_))
        ));
        // p = y => zero gradient.
        let g = assemble_gradient(&[0.3, -0.2], &[0.3, -0.2]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        // Linearity.
        let ab = assemble_gradient(&[1.0, 2.0], &[0.5, 0.5]).unwrap();
        let cd = assemble_gradient(&[-1.0, 1.0], &[0.25, 0.0]).unwrap();
        let sum = assemble_gradient(&[0.0, 3.0], &[0.75, 0.5]).unwrap();
        for i in 0..2 {
            assert!((ab[i] + cd[i] - sum[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn two_term_matches_direct_backprop() {
        let params = init_params(&LayerSpec::new(vec![4, 5, 3, 3]).unwrap(), 7).unwrap();
        let mut rng = crate::seeded_rng(3, 98);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0).collect())
            .collect();
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let traces = forward_batch(&params, &rows).unwrap();
        let zg = full_z_grads(&params, &traces);
        let two_term =
            assemble_gradient(&p_term(&traces, &zg), &y_term_clear(&labels, &zg).normalized())
                .unwrap();
        let direct = direct_gradient(&params, &traces, &labels);
        for (a, b) in two_term.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn hidden_grads_zero_deltas_leave_only_l2() {
        let params = toy_params();
        let rows = vec![vec![0.2, 0.1, -0.4]];
        let traces = forward_batch(&params, &rows).unwrap();
        let deltas = vec![vec![0.0, 0.0]];
        let g = hidden_grads(&params, &traces, &deltas, 0.05);
        let mut off = 0;
        for (l, layer) in params.layers().iter().enumerate() {
            for w in &layer.weights {
                if l + 1 == params.layers().len() {
                    assert_eq!(g[off], 0.0);
                } else {
                    assert!((g[off] - 0.05 * w).abs() < 1e-15);
                }
                off += 1;
            }
            for _ in &layer.bias {
                assert_eq!(g[off], 0.0);
                off += 1;
            }
        }
    }

    #[test]
    fn manual_chain_rule_on_a_2_2_2_net() {
        // Hand-set weights; every expected value below is computed with
        // explicit scalar formulas rather than the library's loops.
        let spec = LayerSpec::new(vec![2, 2, 2]).unwrap();
        let mut params = init_params(&spec, 0).unwrap();
        params.layers[0].weights = vec![0.1, 0.2, 0.3, -0.1];
        params.layers[0].bias = vec![0.05, -0.05];
        params.layers[1].weights = vec![0.4, -0.2, 0.1, 0.3];

        let x = [1.0, 0.5];
        let h1 = 0.1 * x[0] + 0.2 * x[1] + 0.05;
        let h2 = 0.3 * x[0] - 0.1 * x[1] - 0.05;
        let a1 = 1.0 / (1.0 + (-h1 as f64).exp());
        let a2 = 1.0 / (1.0 + (-h2 as f64).exp());
        let z1 = 0.4 * a1 - 0.2 * a2;
        let z2 = 0.1 * a1 + 0.3 * a2;
        let m = z1.max(z2);
        let (e1, e2) = ((z1 - m).exp(), (z2 - m).exp());
        let (p1, p2) = (e1 / (e1 + e2), e2 / (e1 + e2));

        let trace = forward(&params, &x).unwrap();
        assert!((trace.z[0] - z1).abs() < 1e-15);
        assert!((trace.p[0] - p1).abs() < 1e-15);

        // Label class 0: delta = (p1 - 1, p2).
        let (d1, d2) = (p1 - 1.0, p2);
        let da1 = d1 * 0.4 + d2 * 0.1;
        let da2 = d1 * (-0.2) + d2 * 0.3;
        let dh1 = da1 * a1 * (1.0 - a1);
        let dh2 = da2 * a2 * (1.0 - a2);
        let expected = vec![
            dh1 * x[0], dh1 * x[1], dh2 * x[0], dh2 * x[1], // W1
            dh1, dh2, // b1
            d1 * a1, d1 * a2, d2 * a1, d2 * a2, // W2
        ];

        let traces = vec![trace];
        let zg = full_z_grads(&params, &traces);
        let grad = assemble_gradient(
            &p_term(&traces, &zg),
            &y_term_clear(&[0], &zg).normalized(),
        )
        .unwrap();
        for (g, e) in grad.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
        let direct = direct_gradient(&params, &traces, &[0]);
        for (g, e) in direct.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn sgd_step_examples() {
        let spec = LayerSpec::new(vec![1, 1]).unwrap();
        let mut params = init_params(&spec, 0).unwrap();
        params.layers[0].weights = vec![1.0];
        let zero = vec![0.0];

        let unchanged = sgd_step(&params, &zero, 0.1, 0.0).unwrap();
        assert_eq!(unchanged.layers[0].weights, vec![1.0]);

        let decayed = sgd_step(&params, &zero, 0.1, 0.01).unwrap();
        assert!((decayed.layers[0].weights[0] - 0.999).abs() < 1e-15);

        // Two half-lr steps differ from one full step (decay compounds).
        let twice = sgd_step(&sgd_step(&params, &zero, 0.05, 0.01).unwrap(), &zero, 0.05, 0.01)
            .unwrap();
        assert_ne!(twice.layers[0].weights, decayed.layers[0].weights);

        assert!(matches!(
            sgd_step(&params, &[f64::NAN], 0.1, 0.0),
            Err(NnError::NonFiniteGradient)
        ));
        assert!(matches!(
            sgd_step(&params, &zero, 0.0, 0.0),
            Err(NnError::InvalidHyper(_))
        ));
        assert!(matches!(
            sgd_step(&params, &[0.0, 0.0], 0.1, 0.0),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn training_fits_linearly_separable_data() {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let x = i as f64 / 10.0;
            features.push(vec![x, -1.5 - x]);
            labels.push(0);
            features.push(vec![-x, 1.5 + x]);
            labels.push(1);
        }
        let ds = LabeledDataset {
            name: "separable".into(),
            features,
            labels,
            classes: 2,
        };
        let spec = LayerSpec::new(vec![2, 4, 2]).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.5,
            l2: 0.0,
        };
        let model = train_plaintext(&ds, &spec, &cfg, 1).unwrap();
        assert_eq!(evaluate(&model, &ds).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic_and_zero_epochs_is_identity() {
        let ds = crate::data::gen_synthetic_binary(64, 3, 0.5, 5);
        let spec = LayerSpec::new(vec![3, 4, 2]).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train_plaintext(&ds, &spec, &cfg, 9).unwrap();
        let b = train_plaintext(&ds, &spec, &cfg, 9).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());

        let none = TrainConfig { epochs: 0, ..cfg };
        let untrained = train_plaintext(&ds, &spec, &none, 9).unwrap();
        assert_eq!(untrained, init_params(&spec, 9).unwrap());
    }

    #[test]
    fn evaluate_breaks_argmax_ties_toward_class_zero() {
        // Zero weights give exactly uniform probabilities on every sample.
        let spec = LayerSpec::new(vec![2, 2]).unwrap();
        let mut params = init_params(&spec, 0).unwrap();
        params.layers[0].weights = vec![0.0; 4];
        let ds = LabeledDataset {
            name: "ties".into(),
            features: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 1.0]],
            labels: vec![0, 0, 1, 1],
            classes: 2,
        };
        // Every prediction is class 0 by the tie rule; half the labels agree.
        assert_eq!(evaluate(&params, &ds).unwrap(), 0.5);
    }

    #[test]
    fn params_blob_round_trip() {
        let params = toy_params();
        let bytes = params.to_bytes();
        assert_eq!(&bytes[0..4], b"NNP1");
        let back = NetworkParams::from_bytes(&bytes).unwrap();
        assert_eq!(back, params);
        assert!(NetworkParams::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NetworkParams::from_bytes(&bad).is_err());
    }
}
