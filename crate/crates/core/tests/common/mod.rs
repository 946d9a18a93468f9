//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use n2nskip_core::connectivity::SymMatrix;
use n2nskip_core::net::{backward, build_network, forward, Gradients, Network, NetworkSpec};
use n2nskip_core::numcore::softmax_xent;
use n2nskip_core::pruning::{random_prune_with, CoveragePolicy};
use n2nskip_core::skipgen::{insert_n2nskip, SkipBudget};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- gradients

fn loss(net: &Network, x: &[f64], y: usize) -> f64 {
    softmax_xent(forward(net, x).unwrap().logits(), y)
        .unwrap()
        .0
}

/// Smallest distance of any pre-activation (sequential or skip) to the ReLU
/// kink. Exact zeros are skipped: a skip branch whose live inputs are all
/// masked or dead stays at zero under every small perturbation.
pub fn kink_margin(net: &Network, x: &[f64]) -> f64 {
    let acts = forward(net, x).unwrap();
    let depth = net.depth();
    acts.z[..depth - 1]
        .iter()
        .chain(acts.skip_pre.iter())
        .flatten()
        .filter(|v| **v != 0.0)
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Random small network, optionally pruned and given skip connections, with
/// random biases.
pub fn random_net(seed: u64, with_skips: bool) -> Network {
    let mut r = rng(seed);
    let depth = r.random_range(2..=4);
    let dims: Vec<usize> = (0..=depth).map(|_| r.random_range(2..=6)).collect();
    let span = r.random_range(2..=depth);
    let mut net = build_network(&NetworkSpec::new(dims, span, seed)).unwrap();
    if with_skips {
        let d = r.random_range(0.4..0.9);
        let masks = random_prune_with(&net, d, seed, CoveragePolicy::BestEffort).unwrap();
        net = insert_n2nskip(
            &net,
            &masks,
            SkipBudget::new(d, r.random_range(0.2..0.8), span),
            seed,
        )
        .unwrap();
    }
    for b in net.biases.iter_mut().flatten() {
        *b = r.random_range(0.05..0.3) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    net
}

/// Central-difference gradient of the single-sample loss, laid out like
/// `Gradients`.
pub fn fd_gradients(net: &Network, x: &[f64], y: usize, h: f64) -> Gradients {
    let mut g = Gradients::zeros_like(net);
    let mut work = net.clone();
    let probe = |work: &mut Network, get: &dyn Fn(&mut Network) -> &mut f64| -> f64 {
        let orig = *get(work);
        *get(work) = orig + h;
        let up = loss(work, x, y);
        *get(work) = orig - h;
        let down = loss(work, x, y);
        *get(work) = orig;
        (up - down) / (2.0 * h)
    };
    for l in 0..net.seq_weights.len() {
        for i in 0..net.seq_weights[l].as_slice().len() {
            g.seq[l].as_mut_slice()[i] =
                probe(&mut work, &|n| &mut n.seq_weights[l].as_mut_slice()[i]);
        }
        for i in 0..net.biases[l].len() {
            g.bias[l][i] = probe(&mut work, &|n| &mut n.biases[l][i]);
        }
    }
    for s in 0..net.skips.len() {
        for i in 0..net.skips[s].weight.as_slice().len() {
            g.skip[s].as_mut_slice()[i] =
                probe(&mut work, &|n| &mut n.skips[s].weight.as_mut_slice()[i]);
        }
    }
    g
}

pub fn flat(g: &Gradients) -> Vec<f64> {
    g.seq
        .iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .chain(g.bias.iter().flatten().copied())
        .chain(g.skip.iter().flat_map(|m| m.as_slice().iter().copied()))
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between the analytic and finite-difference gradient
/// of a random network at a random input away from ReLU kinks.
pub fn gradient_check(seed: u64, with_skips: bool) -> f64 {
    let net = random_net(seed, with_skips);
    let mut r = rng(seed ^ 0x9e37);
    let classes = net.num_classes();
    let x = loop {
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        if kink_margin(&net, &x) > 1e-3 {
            break x;
        }
    };
    let y = r.random_range(0..classes);
    let analytic = backward(&net, &forward(&net, &x).unwrap(), y).unwrap();
    let numeric = fd_gradients(&net, &x, y, 1e-5);
    flat(&analytic)
        .iter()
        .zip(flat(&numeric))
        .map(|(&a, b)| rel_err(a, b, 1e-4))
        .fold(0.0, f64::max)
}

// ------------------------------------------------------------------ graphs

/// Random weighted graph on `n` nodes with edge probability `p`.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, p: f64, weighted: bool) -> SymMatrix {
    let mut w = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            if r.random_bool(p) {
                let v = if weighted {
                    r.random_range(0.05..1.5)
                } else {
                    1.0
                };
                w.set_sym(i, j, v);
            }
        }
    }
    w
}

/// Dense `n × n` row-major helpers.
pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(m: &SymMatrix) -> Dense {
    (0..m.n())
        .map(|i| (0..m.n()).map(|j| m.get(i, j)).collect())
        .collect()
}

pub fn mat_mul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `exp(−t·L)` by Taylor series with scaling and squaring.
pub fn expm_neg(l: &Dense, t: f64) -> Dense {
    let n = l.len();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| l[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t;
    let mut s = 0;
    while norm1 / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let scale = -t / 2f64.powi(s);
    let a: Dense = l
        .iter()
        .map(|r| r.iter().map(|v| v * scale).collect())
        .collect();
    let mut result: Dense = (0..n)
        .map(|i| (0..n).map(|j| f64::from(i == j)).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..=30 {
        term = mat_mul(&term, &a);
        term.iter_mut().flatten().for_each(|v| *v /= k as f64);
        for (r, tr) in result.iter_mut().zip(&term) {
            for (x, y) in r.iter_mut().zip(tr) {
                *x += y;
            }
        }
    }
    for _ in 0..s {
        result = mat_mul(&result, &result);
    }
    result
}

/// Connected components by union-find.
pub fn components(w: &SymMatrix) -> usize {
    let n = w.n();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if w.get(i, j) != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    (0..n).filter(|&i| find(&mut parent, i) == i).count()
}

// ---------------------------------------------------------- spectral checks

use n2nskip_core::connectivity::{eig_sym, graph_laplacian, heat_matrix, heat_signature};

#[derive(Debug, Default)]
pub struct SpectralReport {
    /// Worst entrywise |H − expm(−tL)|.
    pub heat_err: f64,
    /// Worst ‖U Λ Uᵀ − L‖_F / ‖L‖_F.
    pub recon_rel: f64,
    /// Worst |λ − {0, 1, 3}| on the three-node path.
    pub p3_err: f64,
}

pub fn spectral_oracle(graphs: usize, seed: u64) -> SpectralReport {
    let mut r = rng(seed);
    let mut rep = SpectralReport::default();
    for _ in 0..graphs {
        let n = r.random_range(2..=30);
        let p = r.random_range(0.1..0.9);
        let weighted = r.random_bool(0.5);
        let w = random_graph(&mut r, n, p, weighted);
        let l = graph_laplacian(&w).unwrap();
        let spec = eig_sym(&l).unwrap();
        let recon = spec.reconstruct_with(|x| x);
        let lf = l.frobenius_norm().max(f64::MIN_POSITIVE);
        let resid = recon
            .as_slice()
            .iter()
            .zip(l.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        rep.recon_rel = rep.recon_rel.max(resid / lf);
        let t = r.random_range(0.0..5.0);
        let h = heat_matrix(&spec, t).unwrap();
        let oracle = expm_neg(&to_dense(&l), t);
        rep.heat_err = rep.heat_err.max(max_abs_diff(&to_dense(&h.h), &oracle));
    }
    let mut p3 = SymMatrix::zeros(3);
    p3.set_sym(0, 1, 1.0);
    p3.set_sym(1, 2, 1.0);
    let ev = eig_sym(&graph_laplacian(&p3).unwrap()).unwrap().eigenvalues;
    rep.p3_err = ev
        .iter()
        .zip([0.0, 1.0, 3.0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    rep
}

#[derive(Debug, Default)]
pub struct HeatReport {
    pub identity_err: f64,
    /// Worst ‖L·1‖₂ / ‖L‖_F.
    pub null_rel: f64,
    pub semigroup_err: f64,
    pub trace_err: f64,
    pub conservation_err: f64,
    pub min_entry: f64,
    pub min_eigenvalue: f64,
    /// Graphs whose zero-eigenvalue count differs from the union-find count.
    pub component_mismatches: usize,
    pub graphs: usize,
    pub disconnected: usize,
}

pub fn heat_invariants(graphs: usize, seed: u64) -> HeatReport {
    let mut r = rng(seed);
    let mut rep = HeatReport {
        graphs,
        ..HeatReport::default()
    };
    for _ in 0..graphs {
        let n = r.random_range(2..=30);
        // sparse enough that many graphs split into several components
        let p = r.random_range(0.02..0.4);
        let weighted = r.random_bool(0.5);
        let w = random_graph(&mut r, n, p, weighted);
        let l = graph_laplacian(&w).unwrap();
        let spec = eig_sym(&l).unwrap();

        let h0 = heat_matrix(&spec, 0.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                let e = (h0.h.get(i, j) - f64::from(i == j)).abs();
                rep.identity_err = rep.identity_err.max(e);
            }
        }
        let l1 = l.matvec(&vec![1.0; n]).unwrap();
        let lf = l.frobenius_norm();
        if lf > 0.0 {
            rep.null_rel = rep
                .null_rel
                .max(l1.iter().map(|v| v * v).sum::<f64>().sqrt() / lf);
        }

        let (t1, t2) = (r.random_range(0.0..2.5), r.random_range(0.0..2.5));
        let h1 = to_dense(&heat_matrix(&spec, t1).unwrap().h);
        let h2 = to_dense(&heat_matrix(&spec, t2).unwrap().h);
        let h12 = heat_matrix(&spec, t1 + t2).unwrap();
        rep.semigroup_err = rep
            .semigroup_err
            .max(max_abs_diff(&mat_mul(&h1, &h2), &to_dense(&h12.h)));
        let expected_trace: f64 = spec
            .eigenvalues
            .iter()
            .map(|l| (-l * (t1 + t2)).exp())
            .sum();
        rep.trace_err = rep.trace_err.max((h12.h.trace() - expected_trace).abs());
        rep.min_entry = rep.min_entry.min(
            h12.h
                .as_slice()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        );
        rep.min_eigenvalue = rep.min_eigenvalue.min(spec.eigenvalues[0]);

        let sources: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(r.random_bool(0.4))))
            .collect();
        let sig = heat_signature(&h12, &sources).unwrap();
        let gap = (sig.values.iter().sum::<f64>() - sources.iter().sum::<f64>()).abs();
        rep.conservation_err = rep.conservation_err.max(gap);

        let c = components(&w);
        if c > 1 {
            rep.disconnected += 1;
        }
        if spec.null_count(1e-9) != c {
            rep.component_mismatches += 1;
        }
    }
    rep
}
