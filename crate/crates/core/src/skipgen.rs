//! Turns a pruned sequential network into an N2NSkip network: part of the
//! sparsity budget is moved from the sequential layers into sparse,
//! randomly placed skip matrices `l -> l + k`, so the total number of
//! connections is unchanged.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{he_matrix, Network, SkipConn};
use crate::numcore::Mask;
use crate::pruning::{allocate_proportional, budget_for, ranked_positions, MaskOrigin, MaskSet};
use crate::rng::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipBudget {
    /// Overall density `d` of the pruned network.
    pub total_density: f64,
    /// Share of the budget moved into skip connections, in `(0, 1)`.
    pub split_ratio: f64,
    /// Layers jumped by each skip.
    pub span: usize,
}

impl SkipBudget {
    pub fn new(total_density: f64, split_ratio: f64, span: usize) -> Self {
        SkipBudget {
            total_density,
            split_ratio,
            span,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split ratio must lie strictly between 0 and 1, got {}",
                self.split_ratio
            )));
        }
        if !(self.total_density > 0.0 && self.total_density <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "density must lie in (0, 1], got {}",
                self.total_density
            )));
        }
        if self.span < 2 {
            return Err(Error::InvalidArgument(format!(
                "skip span must be at least 2, got {}",
                self.span
            )));
        }
        Ok(())
    }
}

/// `(from, to)` layer pairs that receive a skip matrix.
pub fn skip_pairs(depth: usize, span: usize) -> Vec<(usize, usize)> {
    if span > depth {
        return Vec::new();
    }
    (0..=depth - span).map(|l| (l, l + span)).collect()
}

/// Connections across sequential and skip masks over the reference network's
/// sequential parameter count.
pub fn density(net: &Network) -> f64 {
    net.total_nnz() as f64 / net.reference_params() as f64
}

/// Applies `masks` to `net`, thins the sequential masks to `d·(1−r)` and
/// spends the freed connections on skip matrices.
pub fn insert_n2nskip(
    net: &Network,
    masks: &MaskSet,
    budget: SkipBudget,
    seed: u64,
) -> Result<Network> {
    budget.validate()?;
    if !net.skips.is_empty() {
        return Err(Error::InvalidArgument(
            "network already has skip connections".into(),
        ));
    }
    let depth = net.depth();
    if budget.span > depth {
        return Err(Error::InvalidArgument(format!(
            "skip span {} exceeds network depth {depth}",
            budget.span
        )));
    }
    let pairs = skip_pairs(depth, budget.span);

    let mut out = net.clone();
    masks.apply(&mut out)?;
    let before = masks.nnz();
    let total = net.reference_params();
    let seq_target =
        budget_for(budget.total_density * (1.0 - budget.split_ratio), total).min(before);
    let skip_total = before - seq_target;
    if seq_target == 0 || skip_total == 0 {
        return Err(Error::InfeasibleDensity {
            requested: budget.total_density,
            minimum: 2.0 / total as f64,
            reason: format!(
                "split {} of {before} connections leaves {seq_target} sequential and {skip_total} skip",
                budget.split_ratio
            ),
        });
    }

    let mut rng = rng_for(seed, Stream::Skip);
    out.seq_masks = match &masks.origin {
        MaskOrigin::Random => thin_random(&masks.seq_masks, seq_target, &mut rng),
        MaskOrigin::Saliency(sal) => {
            let ranked = ranked_positions(sal);
            thin_by_rank(&masks.seq_masks, &ranked, seq_target)
        }
    };

    let dims = &net.layer_dims;
    let sizes: Vec<usize> = pairs.iter().map(|&(f, t)| dims[f] * dims[t]).collect();
    let alloc = allocate_proportional(skip_total, &sizes);
    for (&(from, to), &n) in pairs.iter().zip(&alloc) {
        let (rows, cols) = (dims[to], dims[from]);
        let mut mask = Mask::zeros(rows, cols);
        for p in sample(&mut rng, rows * cols, n).into_iter() {
            mask.bits_mut()[p] = true;
        }
        let weight = he_matrix(rows, cols, &mut rng);
        out.skips.push(SkipConn {
            from_layer: from,
            to_layer: to,
            weight,
            mask,
        });
    }
    out.apply_masks();
    Ok(out)
}

/// Drops entries uniformly at random, stratified by layer so each layer keeps
/// its share of `keep`.
fn thin_random<R: Rng + ?Sized>(masks: &[Mask], keep: usize, rng: &mut R) -> Vec<Mask> {
    let nnz: Vec<usize> = masks.iter().map(Mask::nnz).collect();
    let alloc = allocate_proportional(keep, &nnz);
    masks
        .iter()
        .zip(&alloc)
        .map(|(m, &k)| {
            let on: Vec<usize> = (0..m.len()).filter(|&i| m.bits()[i]).collect();
            let mut out = Mask::zeros(m.rows(), m.cols());
            for j in sample(rng, on.len(), k).into_iter() {
                out.bits_mut()[on[j]] = true;
            }
            out
        })
        .collect()
}

/// Keeps the `keep` highest-ranked entries that are currently unmasked.
fn thin_by_rank(masks: &[Mask], ranked: &[(usize, usize)], keep: usize) -> Vec<Mask> {
    let mut out: Vec<Mask> = masks
        .iter()
        .map(|m| Mask::zeros(m.rows(), m.cols()))
        .collect();
    let mut left = keep;
    for &(l, i) in ranked {
        if left == 0 {
            break;
        }
        if masks[l].bits()[i] {
            out[l].bits_mut()[i] = true;
            left -= 1;
        }
    }
    out
}
