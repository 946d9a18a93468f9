//! Masked MLP with optional neuron-to-neuron skip connections.
//!
//! Layer `i` (0-based) maps activation `a^i` to pre-activation `z^{i+1}`:
//!
//! ```text
//! z^{i+1} = (W_i ⊙ M_i) a^i + b_i + Σ_{skips s → i+1} relu((W_s ⊙ M_s) a^{from(s)})
//! a^{i+1} = relu(z^{i+1})          (hidden layers)
//! a^L     = z^L                    (logits)
//! ```
//!
//! A skip therefore feeds `relu(skip(a^l))` into the target pre-activation
//! before the target's own nonlinearity. Skips carry no bias.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{masked_matvec, masked_matvec_t, relu, softmax_xent, Mask, Matrix};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[d0, d1, ..., dL]`, input dimension first, number of classes last.
    pub layer_dims: Vec<usize>,
    /// Number of sequential layers a skip connection jumps.
    pub skip_span: usize,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, skip_span: usize, seed: u64) -> Self {
        NetworkSpec {
            layer_dims,
            skip_span,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least two weight layers, got layer_dims {:?}",
                self.layer_dims
            )));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dimensions must be positive, got {:?}",
                self.layer_dims
            )));
        }
        if self.skip_span < 2 {
            return Err(Error::InvalidArgument(format!(
                "skip span must be at least 2, got {}",
                self.skip_span
            )));
        }
        Ok(())
    }
}

/// Sparse skip connection from activation `a^from_layer` into pre-activation
/// `z^to_layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipConn {
    pub from_layer: usize,
    pub to_layer: usize,
    /// Shape `(d_to, d_from)`.
    pub weight: Matrix,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layer_dims: Vec<usize>,
    pub skip_span: usize,
    pub seq_weights: Vec<Matrix>,
    pub seq_masks: Vec<Mask>,
    pub biases: Vec<Vec<f64>>,
    pub skips: Vec<SkipConn>,
}

/// He-initialized dense network: weights ~ N(0, 2/fan_in), zero biases,
/// all-ones masks, no skips.
pub fn build_network(spec: &NetworkSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, Stream::Init);
    let dims = &spec.layer_dims;
    let mut seq_weights = Vec::with_capacity(dims.len() - 1);
    let mut seq_masks = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        seq_weights.push(he_matrix(fan_out, fan_in, &mut rng));
        seq_masks.push(Mask::ones(fan_out, fan_in));
        biases.push(vec![0.0; fan_out]);
    }
    Ok(Network {
        layer_dims: dims.clone(),
        skip_span: spec.skip_span,
        seq_weights,
        seq_masks,
        biases,
        skips: Vec::new(),
    })
}

pub(crate) fn he_matrix<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

impl Network {
    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.seq_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    /// Parameter count of the dense reference: Σ d_{i+1}·d_i.
    pub fn reference_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn seq_nnz(&self) -> usize {
        self.seq_masks.iter().map(Mask::nnz).sum()
    }

    pub fn skip_nnz(&self) -> usize {
        self.skips.iter().map(|s| s.mask.nnz()).sum()
    }

    pub fn total_nnz(&self) -> usize {
        self.seq_nnz() + self.skip_nnz()
    }

    /// Sets every masked-out weight to exactly zero.
    pub fn apply_masks(&mut self) {
        for (w, m) in self.seq_weights.iter_mut().zip(&self.seq_masks) {
            zero_masked(w, m);
        }
        for s in &mut self.skips {
            zero_masked(&mut s.weight, &s.mask);
        }
    }

    /// Checks the structural invariants tying weights, masks and skips to
    /// `layer_dims`.
    pub fn validate(&self) -> Result<()> {
        let l = self.layer_dims.len();
        if l < 2
            || self.seq_weights.len() != l - 1
            || self.seq_masks.len() != l - 1
            || self.biases.len() != l - 1
        {
            return Err(Error::Dimension(format!(
                "network with {} layer dims has {} weights, {} masks, {} biases",
                l,
                self.seq_weights.len(),
                self.seq_masks.len(),
                self.biases.len()
            )));
        }
        for i in 0..l - 1 {
            let shape = (self.layer_dims[i + 1], self.layer_dims[i]);
            if self.seq_weights[i].shape() != shape
                || self.seq_masks[i].shape() != shape
                || self.biases[i].len() != shape.0
            {
                return Err(Error::Dimension(format!(
                    "layer {i} does not match shape {shape:?}"
                )));
            }
        }
        for s in &self.skips {
            if s.to_layer >= l || s.to_layer < s.from_layer + 2 {
                return Err(Error::Dimension(format!(
                    "skip {} -> {} is not a valid span for {} layers",
                    s.from_layer, s.to_layer, l
                )));
            }
            let shape = (self.layer_dims[s.to_layer], self.layer_dims[s.from_layer]);
            if s.weight.shape() != shape || s.mask.shape() != shape {
                return Err(Error::Dimension(format!(
                    "skip {} -> {} does not match shape {shape:?}",
                    s.from_layer, s.to_layer
                )));
            }
        }
        Ok(())
    }

    /// Copy of this network with skip weights set to zero (masks kept).
    pub fn with_zeroed_skips(&self) -> Network {
        let mut n = self.clone();
        for s in &mut n.skips {
            s.weight.as_mut_slice().fill(0.0);
        }
        n
    }
}

fn zero_masked(w: &mut Matrix, m: &Mask) {
    for (v, &b) in w.as_mut_slice().iter_mut().zip(m.bits()) {
        if !b {
            *v = 0.0;
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `a[0] = x`, ..., `a[L]` = logits.
    pub a: Vec<Vec<f64>>,
    /// `z[i]` is the full pre-activation of layer `i + 1`.
    pub z: Vec<Vec<f64>>,
    /// Pre-activation of each skip branch, aligned with `Network::skips`.
    pub skip_pre: Vec<Vec<f64>>,
}

impl Activations {
    pub fn logits(&self) -> &[f64] {
        self.a.last().expect("non-empty activations")
    }
}

pub fn forward(net: &Network, x: &[f64]) -> Result<Activations> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "input has length {}, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    let depth = net.depth();
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut skip_pre: Vec<Vec<f64>> = vec![Vec::new(); net.skips.len()];
    a.push(x.to_vec());
    for i in 0..depth {
        let mut zi = masked_matvec(&net.seq_weights[i], &net.seq_masks[i], &a[i]);
        for (zv, b) in zi.iter_mut().zip(&net.biases[i]) {
            *zv += b;
        }
        for (s_idx, s) in net.skips.iter().enumerate() {
            if s.to_layer != i + 1 {
                continue;
            }
            let u = masked_matvec(&s.weight, &s.mask, &a[s.from_layer]);
            for (zv, &uv) in zi.iter_mut().zip(&u) {
                if uv > 0.0 {
                    *zv += uv;
                }
            }
            skip_pre[s_idx] = u;
        }
        let ai = if i + 1 == depth {
            zi.clone()
        } else {
            relu(&zi)
        };
        z.push(zi);
        a.push(ai);
    }
    Ok(Activations { a, z, skip_pre })
}

/// Parameter gradients, laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub seq: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
    pub skip: Vec<Matrix>,
    /// Loss the gradients were taken of.
    pub loss: f64,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            seq: net
                .seq_weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            bias: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            skip: net
                .skips
                .iter()
                .map(|s| Matrix::zeros(s.weight.rows(), s.weight.cols()))
                .collect(),
            loss: 0.0,
        }
    }

    pub fn scale(&mut self, c: f64) {
        for m in self.seq.iter_mut().chain(self.skip.iter_mut()) {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|v| *v *= c);
        }
        self.loss *= c;
    }
}

/// Reverse-mode gradient of the softmax cross-entropy loss of one sample.
pub fn backward(net: &Network, acts: &Activations, label: usize) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(net);
    accumulate_backward(net, acts, label, &mut g)?;
    Ok(g)
}

/// Adds the gradient of one sample into `grads`.
pub fn accumulate_backward(
    net: &Network,
    acts: &Activations,
    label: usize,
    grads: &mut Gradients,
) -> Result<()> {
    let depth = net.depth();
    let stale = acts.a.len() != depth + 1
        || acts.z.len() != depth
        || acts.skip_pre.len() != net.skips.len()
        || acts
            .a
            .iter()
            .zip(&net.layer_dims)
            .any(|(a, &d)| a.len() != d)
        || net
            .skips
            .iter()
            .zip(&acts.skip_pre)
            .any(|(s, u)| u.len() != s.weight.rows());
    if stale {
        return Err(Error::Dimension(
            "activations do not belong to this network".into(),
        ));
    }

    let (loss, dlogits) = softmax_xent(acts.logits(), label)?;
    grads.loss += loss;

    // da[l] accumulates dLoss/da^l from every consumer of a^l.
    let mut da: Vec<Vec<f64>> = net.layer_dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut dz = dlogits;
    for i in (0..depth).rev() {
        // dz is dLoss/dz^{i+1}.
        let w = &net.seq_weights[i];
        let m = &net.seq_masks[i];
        outer_acc(&mut grads.seq[i], m, &dz, &acts.a[i]);
        for (gb, d) in grads.bias[i].iter_mut().zip(&dz) {
            *gb += d;
        }
        if i > 0 {
            add_into(&mut da[i], &masked_matvec_t(w, m, &dz));
        }
        for (s_idx, s) in net.skips.iter().enumerate() {
            if s.to_layer != i + 1 {
                continue;
            }
            let u = &acts.skip_pre[s_idx];
            let du: Vec<f64> = dz
                .iter()
                .zip(u)
                .map(|(&d, &uv)| if uv > 0.0 { d } else { 0.0 })
                .collect();
            outer_acc(&mut grads.skip[s_idx], &s.mask, &du, &acts.a[s.from_layer]);
            if s.from_layer > 0 {
                add_into(
                    &mut da[s.from_layer],
                    &masked_matvec_t(&s.weight, &s.mask, &du),
                );
            }
        }
        if i > 0 {
            dz = da[i]
                .iter()
                .zip(&acts.z[i - 1])
                .map(|(&d, &zv)| if zv > 0.0 { d } else { 0.0 })
                .collect();
        }
    }
    Ok(())
}

fn outer_acc(g: &mut Matrix, m: &Mask, dz: &[f64], a: &[f64]) {
    let cols = g.cols();
    let bits = m.bits();
    let data = g.as_mut_slice();
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut data[r * cols..(r + 1) * cols];
        let mrow = &bits[r * cols..(r + 1) * cols];
        for c in 0..cols {
            if mrow[c] {
                row[c] += d * a[c];
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Mean loss of a batch of `(x, label)` pairs.
pub fn batch_loss(net: &Network, batch: &[(&[f64], usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for &(x, y) in batch {
        let acts = forward(net, x)?;
        total += softmax_xent(acts.logits(), y)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean batch loss.
pub fn batch_gradients(net: &Network, batch: &[(&[f64], usize)]) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g = Gradients::zeros_like(net);
    for &(x, y) in batch {
        let acts = forward(net, x)?;
        accumulate_backward(net, &acts, y, &mut g)?;
    }
    g.scale(1.0 / batch.len() as f64);
    Ok(g)
}
