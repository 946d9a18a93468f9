//! Heat-diffusion connectivity analysis.
//!
//! A network is read as an undirected graph over all of its neurons. From the
//! adjacency `W` we form the Laplacian `L = D − W`, diagonalize it
//! (`L = U Λ Uᵀ`), and evaluate the heat kernel `H(t) = U e^{−Λt} Uᵀ`. Seeding
//! heat at the input neurons gives the diffusion signature `S = H(t)·A`;
//! signatures of two networks are compared by the Euclidean norm of their
//! difference. The scree ratio
//!
//! ```text
//! α(K, t) = Σ_{k=2}^{K+1} e^{−tλ_k} / Σ_{k=2}^{n} e^{−tλ_k}
//! ```
//!
//! tracks how fast diffusion saturates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::Network;
use crate::numcore::Matrix;

/// Default cap on Jacobi sweeps.
pub const MAX_SWEEPS: usize = 100;
/// Jacobi stops once the off-diagonal Frobenius norm drops below this
/// fraction of `‖L‖_F`.
pub const JACOBI_TOL: f64 = 1e-12;

/// Dense symmetric matrix. Constructors only ever write `(i, j)` and `(j, i)`
/// together, so symmetry is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Wraps a square matrix, rejecting anything not exactly symmetric.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::Dimension(format!(
                "{}x{} matrix is not square",
                m.rows(),
                m.cols()
            )));
        }
        for i in 0..n {
            for j in 0..i {
                if m.get(i, j) != m.get(j, i) {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix {
            n,
            data: m.as_slice().to_vec(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.n, self.n, self.data.clone()).expect("square buffer")
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Dimension(format!(
                "vector of length {} against {}x{} matrix",
                x.len(),
                self.n,
                self.n
            )));
        }
        Ok((0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }

    /// Number of undirected edges (nonzero strictly-upper entries).
    pub fn edge_count(&self) -> usize {
        (0..self.n)
            .map(|i| ((i + 1)..self.n).filter(|&j| self.get(i, j) != 0.0).count())
            .sum()
    }
}

/// First node index of every layer when neurons are numbered layer by layer,
/// inputs first.
pub fn layer_offsets(layer_dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(layer_dims.len() + 1);
    let mut acc = 0;
    for &d in layer_dims {
        off.push(acc);
        acc += d;
    }
    off.push(acc);
    off
}

/// Adjacency over all neurons: an edge for every unmasked sequential or skip
/// weight, valued `|w|` when `weighted` and 1 otherwise.
pub fn to_adjacency(net: &Network, weighted: bool) -> SymMatrix {
    let off = layer_offsets(&net.layer_dims);
    let n = off[net.layer_dims.len()];
    let mut a = SymMatrix::zeros(n);
    let mut add = |from_layer: usize, to_layer: usize, w: &Matrix, bits: &[bool]| {
        let cols = w.cols();
        for (idx, &on) in bits.iter().enumerate() {
            if !on {
                continue;
            }
            let (r, c) = (idx / cols, idx % cols);
            let u = off[from_layer] + c;
            let v = off[to_layer] + r;
            let val = if weighted {
                w.as_slice()[idx].abs()
            } else {
                1.0
            };
            a.set_sym(u, v, val);
        }
    };
    for (i, (w, m)) in net.seq_weights.iter().zip(&net.seq_masks).enumerate() {
        add(i, i + 1, w, m.bits());
    }
    for s in &net.skips {
        add(s.from_layer, s.to_layer, &s.weight, s.mask.bits());
    }
    a
}

/// Binary source vector marking the input neurons.
pub fn input_sources(layer_dims: &[usize]) -> Vec<f64> {
    let n: usize = layer_dims.iter().sum();
    let mut a = vec![0.0; n];
    a[..layer_dims[0]].fill(1.0);
    a
}

/// `L = D − W`.
pub fn graph_laplacian(w: &SymMatrix) -> Result<SymMatrix> {
    let n = w.n();
    let mut l = SymMatrix::zeros(n);
    for i in 0..n {
        if w.get(i, i) != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "adjacency has nonzero diagonal at {i}"
            )));
        }
        let mut deg = 0.0;
        for j in 0..n {
            let v = w.get(i, j);
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "adjacency entry ({i}, {j}) = {v} is not a non-negative weight"
                )));
            }
            deg += v;
            if j > i {
                l.set_sym(i, j, -v);
            }
        }
        l.data[i * n + i] = deg;
    }
    Ok(l)
}

/// Ascending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
    /// Jacobi sweeps used.
    pub sweeps: usize,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.n();
        let u = &self.eigenvectors;
        let fl: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        // Scaled columns: (U diag f)ᵢₖ.
        let mut us = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                us[i * n + k] = u.get(i, k) * fl[k];
            }
        }
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            let ui = &us[i * n..(i + 1) * n];
            for j in i..n {
                let uj = u.row(j);
                let v: f64 = ui.iter().zip(uj).map(|(a, b)| a * b).sum();
                out.set_sym(i, j, v);
            }
        }
        out
    }

    /// Eigenvalues below `tol` in absolute value.
    pub fn null_count(&self, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|l| l.abs() < tol).count()
    }
}

/// Full eigendecomposition by cyclic Jacobi rotations with the default sweep
/// cap.
pub fn eig_sym(l: &SymMatrix) -> Result<Spectrum> {
    eig_sym_with(l, MAX_SWEEPS)
}

pub fn eig_sym_with(l: &SymMatrix, max_sweeps: usize) -> Result<Spectrum> {
    let n = l.n();
    let mut a = l.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = l.frobenius_norm();
    let target = JACOBI_TOL * norm;
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += a[p * n + q] * a[p * n + q];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a);
        if off <= target {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::NonConvergence {
                sweeps,
                residual: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut u = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            u.set(r, new_col, v[r * n + old_col]);
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors: u,
        sweeps,
    })
}

/// Heat kernel at a fixed diffusion time.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMatrix {
    pub t: f64,
    pub h: SymMatrix,
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "diffusion time must be finite and non-negative, got {t}"
        )));
    }
    Ok(())
}

/// `H(t) = U e^{−Λt} Uᵀ`.
pub fn heat_matrix(spec: &Spectrum, t: f64) -> Result<HeatMatrix> {
    check_time(t)?;
    Ok(HeatMatrix {
        t,
        h: spec.reconstruct_with(|l| (-l * t).exp()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatSignature {
    pub values: Vec<f64>,
    pub t: f64,
    pub sources: Vec<f64>,
}

/// `S = H(t)·A` for a binary source vector `A`.
pub fn heat_signature(h: &HeatMatrix, sources: &[f64]) -> Result<HeatSignature> {
    if let Some(v) = sources.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "source vector must be binary, found {v}"
        )));
    }
    Ok(HeatSignature {
        values: h.h.matvec(sources)?,
        t: h.t,
        sources: sources.to_vec(),
    })
}

/// `‖S_ref − S_other‖₂`.
pub fn signature_distance(a: &HeatSignature, b: &HeatSignature) -> Result<f64> {
    if a.values.len() != b.values.len() || a.t != b.t {
        return Err(Error::Incomparable(format!(
            "signatures over {} nodes at t={} and {} nodes at t={}",
            a.values.len(),
            a.t,
            b.values.len(),
            b.t
        )));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Eigenvalue count for a fraction `p` of the `n − 1` admissible terms,
/// `round(p·(n−1))` clamped to `[1, n−1]`.
pub fn percent_to_count(p: f64, n: usize) -> usize {
    let m = n.saturating_sub(1).max(1);
    ((p * m as f64).round() as usize).clamp(1, m)
}

/// Scree ratio `α(K, t)` over ascending eigenvalues, skipping `λ₁`.
pub fn alpha(spec: &Spectrum, k: usize, t: f64) -> Result<f64> {
    check_time(t)?;
    let n = spec.n();
    if n < 2 || k < 1 || k > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "K must lie in [1, {}], got {k}",
            n.saturating_sub(1)
        )));
    }
    let lam = &spec.eigenvalues[1..];
    // Shift by the smallest exponent so the leading term is 1 and nothing
    // underflows for large t.
    let base = lam[0];
    let term = |l: f64| (-(l - base) * t).exp();
    let num: f64 = lam[..k].iter().map(|&l| term(l)).sum();
    let den: f64 = num + lam[k..].iter().map(|&l| term(l)).sum::<f64>();
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeCurve {
    pub k: usize,
    pub points: Vec<(f64, f64)>,
    /// Set when α decreases somewhere along the grid by more than 1e-12,
    /// which only happens for degenerate spectra.
    pub degenerate: bool,
}

impl ScreeCurve {
    /// `t,alpha` CSV with nine significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alpha\n");
        for &(t, a) in &self.points {
            let _ = writeln!(out, "{},{}", sig9(t), sig9(a));
        }
        out
    }
}

/// Formats with nine significant digits.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    if (-5..=15).contains(&mag) {
        let decimals = (8 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.8e}")
    }
}

pub fn scree_curve(spec: &Spectrum, k: usize, t_grid: &[f64]) -> Result<ScreeCurve> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if t_grid
        .windows(2)
        .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::InvalidArgument(
            "time grid must be strictly ascending".into(),
        ));
    }
    let points = t_grid
        .iter()
        .map(|&t| alpha(spec, k, t).map(|a| (t, a)))
        .collect::<Result<Vec<_>>>()?;
    let degenerate = points.windows(2).any(|w| w[1].1 < w[0].1 - 1e-12);
    Ok(ScreeCurve {
        k,
        points,
        degenerate,
    })
}

/// First grid time with `α ≥ threshold`, or `+∞` when the curve never gets
/// there.
pub fn saturation_time(curve: &[(f64, f64)], threshold: f64) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("empty scree curve".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    Ok(curve
        .iter()
        .find(|&&(_, a)| a >= threshold)
        .map_or(f64::INFINITY, |&(t, _)| t))
}

/// Evenly spaced grid `[0, step, 2·step, …, max]`.
pub fn linear_grid(max: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![0.0];
    }
    (0..points)
        .map(|i| max * i as f64 / (points - 1) as f64)
        .collect()
}

/// Writes the adjacency as `n <count>` followed by one `u v weight` line per
/// undirected edge (`u < v`, 0-indexed).
pub fn write_edge_list(a: &SymMatrix) -> String {
    let mut out = format!("n {}\n", a.n());
    for i in 0..a.n() {
        for j in (i + 1)..a.n() {
            let w = a.get(i, j);
            if w != 0.0 {
                let _ = writeln!(out, "{i} {j} {w}");
            }
        }
    }
    out
}

pub fn read_edge_list(text: &str, origin: &str) -> Result<SymMatrix> {
    let perr = |row: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        row,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (hrow, header) = lines
        .next()
        .ok_or_else(|| perr(1, "missing `n <count>` header".into()))?;
    let n: usize = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["n", count] => count
            .parse()
            .map_err(|_| perr(hrow + 1, format!("bad node count {count:?}")))?,
        _ => return Err(perr(hrow + 1, "expected `n <count>` header".into())),
    };
    let mut a = SymMatrix::zeros(n);
    for (i, line) in lines {
        let row = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [u, v, w] = parts[..] else {
            return Err(perr(row, "expected `u v weight`".into()));
        };
        let u: usize = u
            .parse()
            .map_err(|_| perr(row, format!("bad node {u:?}")))?;
        let v: usize = v
            .parse()
            .map_err(|_| perr(row, format!("bad node {v:?}")))?;
        let w: f64 = w
            .parse()
            .map_err(|_| perr(row, format!("bad weight {w:?}")))?;
        if u >= n || v >= n || u == v {
            return Err(perr(row, format!("edge ({u}, {v}) invalid for {n} nodes")));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(perr(
                row,
                format!("weight {w} must be finite and non-negative"),
            ));
        }
        a.set_sym(u, v, w);
    }
    Ok(a)
}

pub fn load_edge_list(path: &Path) -> Result<SymMatrix> {
    read_edge_list(&fs::read_to_string(path)?, &path.display().to_string())
}

/// Everything derived from one network's graph at a fixed `t` and `K`.
#[derive(Debug, Clone)]
pub struct GraphAnalysis {
    pub spectrum: Spectrum,
    pub signature: HeatSignature,
    pub scree: ScreeCurve,
    pub saturation_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisParams {
    pub t: f64,
    /// Fraction of the `n − 1` admissible eigenvalues summed in the scree
    /// numerator.
    pub k_fraction: f64,
    pub t_grid: Vec<f64>,
    pub threshold: f64,
}

pub fn analyze_adjacency(
    adj: &SymMatrix,
    sources: &[f64],
    params: &AnalysisParams,
) -> Result<GraphAnalysis> {
    let l = graph_laplacian(adj)?;
    let spectrum = eig_sym(&l)?;
    let h = heat_matrix(&spectrum, params.t)?;
    let signature = heat_signature(&h, sources)?;
    let k = percent_to_count(params.k_fraction, spectrum.n());
    let scree = scree_curve(&spectrum, k, &params.t_grid)?;
    let saturation_time = saturation_time(&scree.points, params.threshold)?;
    Ok(GraphAnalysis {
        spectrum,
        signature,
        scree,
        saturation_time,
    })
}

pub fn analyze_network(
    net: &Network,
    weighted: bool,
    params: &AnalysisParams,
) -> Result<GraphAnalysis> {
    analyze_adjacency(
        &to_adjacency(net, weighted),
        &input_sources(&net.layer_dims),
        params,
    )
}
