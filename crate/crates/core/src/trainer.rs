//! Mini-batch SGD with momentum, coupled weight decay and a step learning
//! rate schedule.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::net::{accumulate_backward, forward, Gradients, Network};
use crate::numcore::Matrix;
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub lr0: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lr0: 0.05,
            momentum: 0.9,
            decay_factor: 0.5,
            decay_every: 30,
            weight_decay: 0.0005,
            batch_size: 128,
            epochs: 100,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && self.momentum >= 0.0
            && self.decay_factor > 0.0
            && self.decay_factor < 1.0
            && self.decay_every > 0
            && self.weight_decay >= 0.0
            && self.batch_size > 0;
        if !ok {
            return Err(Error::Config(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }
}

pub fn lr_at(epoch: usize, hp: &HyperParams) -> f64 {
    hp.lr0 * hp.decay_factor.powi((epoch / hp.decay_every) as i32)
}

/// Momentum buffers, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub seq: Vec<Matrix>,
    pub bias: Vec<Vec<f64>>,
    pub skip: Vec<Matrix>,
}

impl Velocity {
    pub fn zeros_like(net: &Network) -> Self {
        let g = Gradients::zeros_like(net);
        Velocity {
            seq: g.seq,
            bias: g.bias,
            skip: g.skip,
        }
    }
}

/// `v ← μ·v + g + λ·w`, `w ← w − lr·v` on unmasked weights; biases skip the
/// decay term. Masked positions keep zero weight and zero velocity.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    vel: &mut Velocity,
    lr: f64,
    hp: &HyperParams,
) -> Result<()> {
    let shapes_ok = grads.seq.len() == net.seq_weights.len()
        && vel.seq.len() == net.seq_weights.len()
        && grads.skip.len() == net.skips.len()
        && vel.skip.len() == net.skips.len()
        && grads.bias.len() == net.biases.len()
        && vel.bias.len() == net.biases.len()
        && net
            .seq_weights
            .iter()
            .zip(&grads.seq)
            .zip(&vel.seq)
            .all(|((w, g), v)| w.shape() == g.shape() && w.shape() == v.shape())
        && net
            .skips
            .iter()
            .zip(&grads.skip)
            .zip(&vel.skip)
            .all(|((s, g), v)| s.weight.shape() == g.shape() && s.weight.shape() == v.shape())
        && net
            .biases
            .iter()
            .zip(&grads.bias)
            .zip(&vel.bias)
            .all(|((b, g), v)| b.len() == g.len() && b.len() == v.len());
    if !shapes_ok {
        return Err(Error::Dimension(
            "gradients or velocity do not match the network".into(),
        ));
    }
    for i in 0..net.seq_weights.len() {
        update_masked(
            net.seq_weights[i].as_mut_slice(),
            net.seq_masks[i].bits(),
            grads.seq[i].as_slice(),
            vel.seq[i].as_mut_slice(),
            lr,
            hp.momentum,
            hp.weight_decay,
        );
        for ((b, g), v) in net.biases[i]
            .iter_mut()
            .zip(&grads.bias[i])
            .zip(vel.bias[i].iter_mut())
        {
            *v = hp.momentum * *v + g;
            *b -= lr * *v;
        }
    }
    for (s_idx, s) in net.skips.iter_mut().enumerate() {
        update_masked(
            s.weight.as_mut_slice(),
            s.mask.bits(),
            grads.skip[s_idx].as_slice(),
            vel.skip[s_idx].as_mut_slice(),
            lr,
            hp.momentum,
            hp.weight_decay,
        );
    }
    Ok(())
}

fn update_masked(
    w: &mut [f64],
    mask: &[bool],
    g: &[f64],
    v: &mut [f64],
    lr: f64,
    momentum: f64,
    wd: f64,
) {
    for i in 0..w.len() {
        if !mask[i] {
            continue;
        }
        v[i] = momentum * v[i] + g[i] + wd * w[i];
        w[i] -= lr * v[i];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `epoch,lr,train_loss,train_acc,test_acc`; reals use
    /// six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,train_acc,test_acc\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
            ));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Fraction of samples whose arg-max logit equals the label; ties resolve to
/// the lowest class index. An empty split scores 0.
pub fn evaluate(net: &Network, split: Split<'_>) -> Result<f64> {
    if split.x.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (x, &y) in split.x.iter().zip(split.y) {
        let acts = forward(net, x)?;
        if argmax(acts.logits()) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.x.len() as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `net` in place for `hp.epochs` epochs.
pub fn train(net: &mut Network, data: &Dataset, hp: &HyperParams, seed: u64) -> Result<History> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut history = History::default();
    let mut vel = Velocity::zeros_like(net);
    let mut rng = rng_for(seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..data.train_x.len()).collect();
    for epoch in 0..hp.epochs {
        let lr = lr_at(epoch, hp);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let mut g = Gradients::zeros_like(net);
            for &i in chunk {
                let acts = forward(net, &data.train_x[i])?;
                accumulate_backward(net, &acts, data.train_y[i], &mut g)?;
            }
            loss_sum += g.loss;
            g.scale(1.0 / chunk.len() as f64);
            sgd_step(net, &g, &mut vel, lr, hp)?;
        }
        let train_loss = loss_sum / data.train_x.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at epoch {epoch} (loss {train_loss})"
            )));
        }
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            train_acc: evaluate(net, data.train())?,
            test_acc: evaluate(net, data.test())?,
        });
    }
    Ok(history)
}
