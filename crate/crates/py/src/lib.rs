//! Python bindings for `n2nskip_core`.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use n2nskip_core::checkpoint;
use n2nskip_core::config::{default_t_grid, ExperimentConfig};
use n2nskip_core::connectivity::{analyze_network, AnalysisParams};
use n2nskip_core::data::{
    gen_blobs as core_gen_blobs, load_csv as core_load_csv, Dataset as CoreDataset, Split,
};
use n2nskip_core::experiment::run_sweep;
use n2nskip_core::net::{build_network, forward, Network as CoreNetwork, NetworkSpec};
use n2nskip_core::pruning::{
    csp_prune as core_csp, random_prune_with, CoveragePolicy, MaskSet as CoreMaskSet,
};
use n2nskip_core::skipgen::{insert_n2nskip as core_insert, SkipBudget};
use n2nskip_core::trainer::{evaluate as core_evaluate, train as core_train, HyperParams};
use n2nskip_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(module = "n2nskip", from_py_object)]
#[derive(Clone)]
struct Network {
    inner: CoreNetwork,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (layer_dims, skip_span = 2, seed = 0))]
    fn new(layer_dims: Vec<usize>, skip_span: usize, seed: u64) -> PyResult<Self> {
        let inner =
            build_network(&NetworkSpec::new(layer_dims, skip_span, seed)).map_err(py_err)?;
        Ok(Network { inner })
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims.clone()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn seq_nnz(&self) -> usize {
        self.inner.seq_nnz()
    }

    #[getter]
    fn skip_nnz(&self) -> usize {
        self.inner.skip_nnz()
    }

    #[getter]
    fn total_nnz(&self) -> usize {
        self.inner.total_nnz()
    }

    #[getter]
    fn reference_params(&self) -> usize {
        self.inner.reference_params()
    }

    /// Connections over the dense sequential parameter count.
    #[getter]
    fn density(&self) -> f64 {
        n2nskip_core::skipgen::density(&self.inner)
    }

    /// `(from_layer, to_layer)` of each skip matrix.
    #[getter]
    fn skips(&self) -> Vec<(usize, usize)> {
        self.inner
            .skips
            .iter()
            .map(|s| (s.from_layer, s.to_layer))
            .collect()
    }

    /// Raw output logits for one input.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(forward(&self.inner, &x).map_err(py_err)?.logits().to_vec())
    }

    fn to_json(&self) -> PyResult<String> {
        checkpoint::to_json(&self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Network {
            inner: checkpoint::from_json(text).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, path.as_ref()).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Network {
            inner: checkpoint::load(path.as_ref()).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(layer_dims={:?}, nnz={}, skips={})",
            self.inner.layer_dims,
            self.inner.total_nnz(),
            self.inner.skips.len()
        )
    }
}

#[pyclass(module = "n2nskip", from_py_object)]
#[derive(Clone)]
struct MaskSet {
    inner: CoreMaskSet,
}

#[pymethods]
impl MaskSet {
    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    #[getter]
    fn density(&self) -> f64 {
        self.inner.density()
    }

    /// Per-layer kept counts.
    #[getter]
    fn layer_nnz(&self) -> Vec<usize> {
        self.inner.seq_masks.iter().map(|m| m.nnz()).collect()
    }

    /// A copy of `net` with the masks applied.
    fn apply(&self, net: &Network) -> PyResult<Network> {
        let mut out = net.inner.clone();
        self.inner.apply(&mut out).map_err(py_err)?;
        Ok(Network { inner: out })
    }
}

#[pyclass(module = "n2nskip", from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[getter]
    fn train_x(&self) -> Vec<Vec<f64>> {
        self.inner.train_x.clone()
    }

    #[getter]
    fn train_y(&self) -> Vec<usize> {
        self.inner.train_y.clone()
    }

    #[getter]
    fn test_x(&self) -> Vec<Vec<f64>> {
        self.inner.test_x.clone()
    }

    #[getter]
    fn test_y(&self) -> Vec<usize> {
        self.inner.test_y.clone()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }
}

/// Connectivity summary of a network graph.
#[pyclass(module = "n2nskip", get_all, skip_from_py_object)]
struct Analysis {
    eigenvalues: Vec<f64>,
    signature: Vec<f64>,
    t: f64,
    k: usize,
    scree: Vec<(f64, f64)>,
    saturation_time: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (classes, dim, per_class, spread, seed = 0))]
fn gen_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: core_gen_blobs(classes, dim, per_class, spread, seed).map_err(py_err)?,
    })
}

#[pyfunction]
fn load_csv(path: &str, classes: usize) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: core_load_csv(path.as_ref(), classes).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (net, density, seed = 0, strict = false))]
fn random_prune(net: &Network, density: f64, seed: u64, strict: bool) -> PyResult<MaskSet> {
    let policy = if strict {
        CoveragePolicy::Strict
    } else {
        CoveragePolicy::BestEffort
    };
    Ok(MaskSet {
        inner: random_prune_with(&net.inner, density, seed, policy).map_err(py_err)?,
    })
}

/// Connection-sensitivity pruning on the first `batch` training samples.
#[pyfunction]
#[pyo3(signature = (net, data, density, batch = 128))]
fn csp_prune(net: &Network, data: &Dataset, density: f64, batch: usize) -> PyResult<MaskSet> {
    Ok(MaskSet {
        inner: core_csp(&net.inner, &data.inner.train_batch(batch), density).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (net, masks, density, split_ratio = 0.5, span = 2, seed = 0))]
fn insert_n2nskip(
    net: &Network,
    masks: &MaskSet,
    density: f64,
    split_ratio: f64,
    span: usize,
    seed: u64,
) -> PyResult<Network> {
    let budget = SkipBudget::new(density, split_ratio, span);
    Ok(Network {
        inner: core_insert(&net.inner, &masks.inner, budget, seed).map_err(py_err)?,
    })
}

/// Trains a copy of `net`; returns it with per-epoch `(train_loss, test_acc)`.
#[pyfunction]
#[pyo3(signature = (net, data, epochs = 100, lr = 0.05, batch_size = 128, seed = 0))]
fn train(
    py: Python<'_>,
    net: &Network,
    data: &Dataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> PyResult<(Network, Vec<(f64, f64)>)> {
    let hp = HyperParams {
        epochs,
        lr0: lr,
        batch_size,
        ..HyperParams::default()
    };
    let mut out = net.inner.clone();
    let data = &data.inner;
    let history = py
        .detach(|| core_train(&mut out, data, &hp, seed))
        .map_err(py_err)?;
    let curve = history
        .records
        .iter()
        .map(|r| (r.train_loss, r.test_acc))
        .collect();
    Ok((Network { inner: out }, curve))
}

#[pyfunction]
fn evaluate(net: &Network, xs: Vec<Vec<f64>>, ys: Vec<usize>) -> PyResult<f64> {
    if xs.len() != ys.len() {
        return Err(PyValueError::new_err("xs and ys differ in length"));
    }
    core_evaluate(&net.inner, Split { x: &xs, y: &ys }).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (net, t = 1.5, k_fraction = 0.5, threshold = 0.97, weighted = true))]
fn analyze(
    net: &Network,
    t: f64,
    k_fraction: f64,
    threshold: f64,
    weighted: bool,
) -> PyResult<Analysis> {
    let params = AnalysisParams {
        t,
        k_fraction,
        t_grid: default_t_grid(),
        threshold,
    };
    let ga = analyze_network(&net.inner, weighted, &params).map_err(py_err)?;
    Ok(Analysis {
        eigenvalues: ga.spectrum.eigenvalues,
        signature: ga.signature.values,
        t,
        k: ga.scree.k,
        scree: ga.scree.points,
        saturation_time: ga.saturation_time.is_finite().then_some(ga.saturation_time),
    })
}

#[pyfunction]
fn signature_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("signatures differ in length"));
    }
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Runs a JSON experiment config (with its sweep, if any) and returns the
/// report as JSON. Nothing is written to disk.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let outcome = py.detach(|| run_sweep(&cfg)).map_err(py_err)?;
    outcome.report.to_json().map_err(py_err)
}

#[pymodule]
fn n2nskip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<MaskSet>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Analysis>()?;
    m.add_function(wrap_pyfunction!(gen_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(random_prune, m)?)?;
    m.add_function(wrap_pyfunction!(csp_prune, m)?)?;
    m.add_function(wrap_pyfunction!(insert_n2nskip, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(signature_distance, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
