//! Prune-at-initialization mask generators.
//!
//! * Randomized pruning (RP): a uniformly random subset of each layer, with
//!   the layer budget proportional to the layer's parameter count, followed by
//!   a degree repair pass that gives every neuron an incoming and an outgoing
//!   edge.
//! * Connection sensitivity pruning (CSP): keep the global top-k weights by
//!   `|w · ∂L/∂w|` measured on one batch at initialization.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{batch_gradients, Gradients, Network};
use crate::numcore::{Mask, Matrix};
use crate::rng::{rng_for, Stream};

/// Per-layer saliency scores, shaped like the sequential weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub layers: Vec<Matrix>,
}

/// How a mask set was produced. Skip insertion thins the sequential masks
/// differently depending on this.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskOrigin {
    Random,
    Saliency(SaliencyMap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub seq_masks: Vec<Mask>,
    pub target_density: f64,
    pub origin: MaskOrigin,
}

impl MaskSet {
    pub fn nnz(&self) -> usize {
        self.seq_masks.iter().map(Mask::nnz).sum()
    }

    pub fn total_params(&self) -> usize {
        self.seq_masks.iter().map(Mask::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / self.total_params() as f64
    }

    /// Installs the masks on `net` and zeroes the pruned weights.
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        if self.seq_masks.len() != net.seq_masks.len()
            || self
                .seq_masks
                .iter()
                .zip(&net.seq_weights)
                .any(|(m, w)| m.shape() != w.shape())
        {
            return Err(Error::Dimension("mask set does not match network".into()));
        }
        net.seq_masks = self.seq_masks.clone();
        net.apply_masks();
        Ok(())
    }
}

/// Whether RP must give every neuron an in- and out-edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoveragePolicy {
    /// Reject densities whose per-layer budget cannot cover every neuron.
    #[default]
    Strict,
    /// Repair as many neurons as the layer budget allows.
    BestEffort,
}

fn check_density(d: f64) -> Result<()> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must lie in (0, 1], got {d}"
        )));
    }
    Ok(())
}

fn layer_sizes(net: &Network) -> Vec<usize> {
    net.seq_weights
        .iter()
        .map(|w| w.rows() * w.cols())
        .collect()
}

/// Splits `budget` across buckets proportionally to `sizes` with
/// largest-remainder rounding (ties go to the lower index). The result sums
/// to `budget` exactly when `budget <= Σ sizes`.
pub fn allocate_proportional(budget: usize, sizes: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let budget = budget.min(total);
    let mut alloc: Vec<usize> = sizes
        .iter()
        .map(|&s| ((budget as u128 * s as u128) / total as u128) as usize)
        .collect();
    let mut remainders: Vec<(u128, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| ((budget as u128 * s as u128) % total as u128, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = budget - alloc.iter().sum::<usize>();
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    alloc
}

/// `round(d × total)` with the half-away-from-zero convention.
pub fn budget_for(d: f64, total: usize) -> usize {
    (d * total as f64).round() as usize
}

/// Smallest budget `b` whose proportional allocation meets `floors`.
fn min_budget(sizes: &[usize], floors: &[usize]) -> usize {
    let total: usize = sizes.iter().sum();
    let start: usize = floors.iter().sum();
    (start..=total)
        .find(|&b| {
            allocate_proportional(b, sizes)
                .iter()
                .zip(floors)
                .all(|(a, f)| a >= f)
        })
        .unwrap_or(total)
}

/// Randomized pruning with full degree repair.
pub fn random_prune(net: &Network, d: f64, seed: u64) -> Result<MaskSet> {
    random_prune_with(net, d, seed, CoveragePolicy::Strict)
}

pub fn random_prune_with(
    net: &Network,
    d: f64,
    seed: u64,
    policy: CoveragePolicy,
) -> Result<MaskSet> {
    check_density(d)?;
    let sizes = layer_sizes(net);
    let total: usize = sizes.iter().sum();
    let budget = budget_for(d, total);
    let alloc = allocate_proportional(budget, &sizes);

    let cover_floors: Vec<usize> = net
        .seq_weights
        .iter()
        .map(|w| w.rows().max(w.cols()))
        .collect();
    let ones = vec![1; sizes.len()];
    let floors = match policy {
        CoveragePolicy::Strict => &cover_floors,
        CoveragePolicy::BestEffort => &ones,
    };
    if let Some(i) = (0..sizes.len()).find(|&i| alloc[i] < floors[i]) {
        let minimum = min_budget(&sizes, floors) as f64 / total as f64;
        return Err(Error::InfeasibleDensity {
            requested: d,
            minimum,
            reason: match policy {
                CoveragePolicy::Strict => format!(
                    "layer {i} receives {} connections but needs {} to give every neuron an in- and out-edge",
                    alloc[i], floors[i]
                ),
                CoveragePolicy::BestEffort => format!("layer {i} receives no connections"),
            },
        });
    }

    let mut rng = rng_for(seed, Stream::Prune);
    let seq_masks = net
        .seq_weights
        .iter()
        .zip(&alloc)
        .map(|(w, &n)| select_with_repair(w.rows(), w.cols(), n, &mut rng))
        .collect();
    Ok(MaskSet {
        seq_masks,
        target_density: d,
        origin: MaskOrigin::Random,
    })
}

/// Degree bookkeeping for one layer's mask during repair.
struct LayerPick {
    cols: usize,
    mask: Mask,
    /// Selected positions, highest priority first.
    picked: Vec<usize>,
    protected: Vec<bool>,
    row_deg: Vec<usize>,
    col_deg: Vec<usize>,
}

impl LayerPick {
    fn new(rows: usize, cols: usize, picked: Vec<usize>) -> Self {
        let mut lp = LayerPick {
            cols,
            mask: Mask::zeros(rows, cols),
            picked: Vec::new(),
            protected: vec![false; rows * cols],
            row_deg: vec![0; rows],
            col_deg: vec![0; cols],
        };
        for p in picked {
            lp.insert(p);
            lp.picked.push(p);
        }
        lp
    }

    fn insert(&mut self, p: usize) {
        self.mask.bits_mut()[p] = true;
        self.row_deg[p / self.cols] += 1;
        self.col_deg[p % self.cols] += 1;
    }

    fn erase(&mut self, p: usize) {
        self.mask.bits_mut()[p] = false;
        self.row_deg[p / self.cols] -= 1;
        self.col_deg[p % self.cols] -= 1;
    }

    fn covered(&self) -> bool {
        self.row_deg.iter().chain(&self.col_deg).all(|&d| d > 0)
    }

    /// Adds edge `(r, c)` and evicts the lowest-priority unprotected pick that
    /// leaves both of its endpoints with another edge. Rolls back and returns
    /// false when there is no such pick.
    fn swap_in(&mut self, r: usize, c: usize) -> bool {
        let p = r * self.cols + c;
        if self.mask.bits()[p] {
            return false;
        }
        self.insert(p);
        let cols = self.cols;
        let victim = self.picked.iter().rposition(|&q| {
            !self.protected[q] && self.row_deg[q / cols] >= 2 && self.col_deg[q % cols] >= 2
        });
        match victim {
            Some(vi) => {
                let v = self.picked.remove(vi);
                self.erase(v);
                self.protected[p] = true;
                self.picked.insert(0, p);
                true
            }
            None => {
                self.erase(p);
                false
            }
        }
    }
}

/// Picks `n` of `rows × cols` positions uniformly at random, then swaps in an
/// edge for each neuron left without one, evicting the lowest-priority
/// unprotected pick whose endpoints both keep another edge. Uncovered
/// partners are tried first. Neurons that cannot be repaired this way are left
/// uncovered; when `n ≥ max(rows, cols)` and that happens, the layer is redrawn
/// as a random edge cover topped up with random picks.
fn select_with_repair<R: Rng + ?Sized>(rows: usize, cols: usize, n: usize, rng: &mut R) -> Mask {
    if n >= rows * cols {
        return Mask::ones(rows, cols);
    }
    let mut order: Vec<usize> = (0..rows * cols).collect();
    order.shuffle(rng);
    let mut lp = LayerPick::new(rows, cols, order[..n].to_vec());

    // Rows are encoded as 0..rows, columns as rows..rows+cols.
    let mut todo: Vec<usize> = (0..rows)
        .filter(|&r| lp.row_deg[r] == 0)
        .chain((0..cols).filter(|&c| lp.col_deg[c] == 0).map(|c| rows + c))
        .collect();
    todo.shuffle(rng);

    for v in todo {
        let is_row = v < rows;
        let idx = if is_row { v } else { v - rows };
        let deg = if is_row {
            lp.row_deg[idx]
        } else {
            lp.col_deg[idx]
        };
        if deg > 0 {
            continue;
        }
        let other_deg = if is_row { &lp.col_deg } else { &lp.row_deg };
        let (mut open, mut rest): (Vec<usize>, Vec<usize>) =
            (0..other_deg.len()).partition(|&u| other_deg[u] == 0);
        open.shuffle(rng);
        rest.shuffle(rng);
        for u in open.into_iter().chain(rest) {
            let (r, c) = if is_row { (idx, u) } else { (u, idx) };
            if lp.swap_in(r, c) {
                break;
            }
        }
    }

    if !lp.covered() && n >= rows.max(cols) {
        return cover_then_fill(rows, cols, n, rng);
    }
    lp.mask
}

/// Random minimum edge cover (a random matching extended to the larger side)
/// followed by uniformly random extra positions up to `n`.
fn cover_then_fill<R: Rng + ?Sized>(rows: usize, cols: usize, n: usize, rng: &mut R) -> Mask {
    let mut mask = Mask::zeros(rows, cols);
    let mut rs: Vec<usize> = (0..rows).collect();
    let mut cs: Vec<usize> = (0..cols).collect();
    rs.shuffle(rng);
    cs.shuffle(rng);
    for i in 0..rows.max(cols) {
        let r = if i < rows {
            rs[i]
        } else {
            rs[rng.random_range(0..rows)]
        };
        let c = if i < cols {
            cs[i]
        } else {
            cs[rng.random_range(0..cols)]
        };
        mask.set(r, c, true);
    }
    let mut order: Vec<usize> = (0..rows * cols).collect();
    order.shuffle(rng);
    let mut left = n - mask.nnz();
    for p in order {
        if left == 0 {
            break;
        }
        if !mask.bits()[p] {
            mask.bits_mut()[p] = true;
            left -= 1;
        }
    }
    mask
}

/// `|w ⊙ g|` for every sequential weight.
pub fn saliency_from_gradients(net: &Network, grads: &Gradients) -> Result<SaliencyMap> {
    if grads.seq.len() != net.seq_weights.len() {
        return Err(Error::Dimension("gradients do not match network".into()));
    }
    let layers = net
        .seq_weights
        .iter()
        .zip(&grads.seq)
        .map(|(w, g)| {
            let data = w
                .as_slice()
                .iter()
                .zip(g.as_slice())
                .map(|(a, b)| (a * b).abs())
                .collect();
            Matrix::from_vec(w.rows(), w.cols(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SaliencyMap { layers })
}

/// Connection sensitivity of each weight on the mean batch loss.
pub fn snip_saliency(net: &Network, batch: &[(&[f64], usize)]) -> Result<SaliencyMap> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("saliency batch is empty".into()));
    }
    let grads = batch_gradients(net, batch)?;
    saliency_from_gradients(net, &grads)
}

pub fn csp_prune(net: &Network, batch: &[(&[f64], usize)], d: f64) -> Result<MaskSet> {
    check_density(d)?;
    let sal = snip_saliency(net, batch)?;
    csp_from_saliency(sal, d)
}

/// Keeps the global top `round(d × total)` entries of `sal`. Equal scores
/// are resolved in favour of the smaller `(layer, row, col)`.
pub fn csp_from_saliency(sal: SaliencyMap, d: f64) -> Result<MaskSet> {
    check_density(d)?;
    let total: usize = sal.layers.iter().map(|m| m.rows() * m.cols()).sum();
    let budget = budget_for(d, total);
    if budget < 1 {
        return Err(Error::InfeasibleDensity {
            requested: d,
            minimum: 0.5 / total as f64,
            reason: "fewer than one connection would survive".into(),
        });
    }
    let kept = ranked_positions(&sal);
    let mut seq_masks: Vec<Mask> = sal
        .layers
        .iter()
        .map(|m| Mask::zeros(m.rows(), m.cols()))
        .collect();
    for &(layer, idx) in kept.iter().take(budget) {
        seq_masks[layer].bits_mut()[idx] = true;
    }
    Ok(MaskSet {
        seq_masks,
        target_density: d,
        origin: MaskOrigin::Saliency(sal),
    })
}

/// All `(layer, flat index)` positions, most salient first.
pub(crate) fn ranked_positions(sal: &SaliencyMap) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, usize, usize)> = sal
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, m)| {
            m.as_slice()
                .iter()
                .enumerate()
                .map(move |(i, &s)| (s, l, i))
        })
        .collect();
    // Row-major flat index order equals (row, col) order within a layer.
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all.into_iter().map(|(_, l, i)| (l, i)).collect()
}
