//! Python bindings for `dynega_landscape`. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use dynega_landscape::fitmetrics;
use dynega_landscape::glla::{self, GllaConfig};
use dynega_landscape::ingest::{self, EmbeddingMatrix, ItemPool};
use dynega_landscape::landscape::{self, CompositeWeights, LandscapeTrace, Optimum, SweepConfig};
use dynega_landscape::netfilter::{self, CorrMatrix, Network};
use dynega_landscape::pipeline::{self, DepthResult, EstimatorOptions, TefiSource};
use dynega_landscape::simgen::{self, Band, MonteCarloConfig, SyntheticSpec};
use dynega_landscape::walktrap::{self as wt, Partition};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn partition(labels: Option<Vec<usize>>) -> Option<Partition> {
    labels.map(Partition::from_labels)
}

#[pyclass(name = "ItemPool", module = "dynega")]
#[derive(Clone)]
struct PyItemPool(ItemPool);

#[pymethods]
impl PyItemPool {
    /// Reads an item pool CSV with columns `id,text,dimension`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ingest::load_item_pool(&path).map(Self).map_err(err)
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.0.ids()
    }

    #[getter]
    fn dimension_names(&self) -> Vec<String> {
        self.0.dimension_names().to_vec()
    }

    /// Ground-truth community label of every item.
    fn truth(&self) -> Vec<usize> {
        self.0.truth().labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "EmbeddingMatrix", module = "dynega")]
#[derive(Clone)]
struct PyEmbeddingMatrix(EmbeddingMatrix);

#[pymethods]
impl PyEmbeddingMatrix {
    #[new]
    fn new(item_ids: Vec<String>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        EmbeddingMatrix::from_rows(item_ids, &rows).map(Self).map_err(err)
    }

    /// Reads embeddings (CSV or JSONL) aligned to the items of `pool`.
    #[staticmethod]
    fn load(path: PathBuf, pool: &PyItemPool) -> PyResult<Self> {
        ingest::load_embeddings(&path, &pool.0).map(Self).map_err(err)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_csv(&path).map_err(err)
    }

    #[getter]
    fn item_ids(&self) -> Vec<String> {
        self.0.item_ids().to_vec()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.0.n_items()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.0.depth()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.n_items() {
            return Err(err(format!("row {i} out of range")));
        }
        Ok(self.0.row(i))
    }

    fn __repr__(&self) -> String {
        format!("EmbeddingMatrix(n_items={}, depth={})", self.0.n_items(), self.0.depth())
    }
}

fn optimum_dict<'py>(py: Python<'py>, o: &Optimum) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("depth", o.depth)?;
    d.set_item("nmi", o.nmi)?;
    d.set_item("tefi", o.tefi)?;
    d.set_item("composite", o.composite)?;
    Ok(d)
}

#[pyclass(name = "LandscapeTrace", module = "dynega")]
struct PyTrace(LandscapeTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn depths(&self) -> Vec<usize> {
        self.0.points.iter().map(|p| p.depth).collect()
    }

    #[getter]
    fn statuses(&self) -> Vec<String> {
        self.0.points.iter().map(DepthResult::status_label).collect()
    }

    #[getter]
    fn nmi(&self) -> Vec<Option<f64>> {
        self.0.points.iter().map(|p| p.nmi).collect()
    }

    #[getter]
    fn tefi(&self) -> Vec<Option<f64>> {
        self.0.points.iter().map(|p| p.tefi).collect()
    }

    #[getter]
    fn n_communities(&self) -> Vec<Option<usize>> {
        self.0.points.iter().map(|p| p.n_communities).collect()
    }

    #[getter]
    fn composite(&self) -> Vec<Option<f64>> {
        self.0.composite.clone()
    }

    /// The NMI-only, TEFI-only and composite optima.
    fn optima<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new_bound(py);
        match &self.0.argmax_nmi {
            Some(o) => d.set_item("nmi_only", optimum_dict(py, o)?)?,
            None => d.set_item("nmi_only", py.None())?,
        }
        d.set_item("tefi_only", optimum_dict(py, &self.0.argmin_tefi)?)?;
        d.set_item("composite", optimum_dict(py, &self.0.composite_opt)?)?;
        Ok(d)
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    fn __len__(&self) -> usize {
        self.0.points.len()
    }
}

fn estimator(walktrap_steps: usize, tefi_source: &str) -> PyResult<EstimatorOptions> {
    Ok(EstimatorOptions {
        walktrap_steps,
        tefi_source: tefi_source.parse::<TefiSource>().map_err(err)?,
    })
}

fn result_dict<'py>(py: Python<'py>, r: &DepthResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new_bound(py);
    d.set_item("depth", r.depth)?;
    d.set_item("status", r.status_label())?;
    d.set_item("n_communities", r.n_communities)?;
    d.set_item("tefi", r.tefi)?;
    d.set_item("nmi", r.nmi)?;
    d.set_item("labels", r.partition.as_ref().map(|p| p.labels().to_vec()))?;
    Ok(d)
}

/// DynEGA over a grid of embedding depths.
#[pyfunction]
#[pyo3(signature = (
    embeddings, truth=None, depth_min=3, depth_max=None, depth_step=5, weights=(0.7, 0.3),
    raw_nmi=false, window=5, tau=1, delta_t=1.0, max_order=2, use_order=1,
    walktrap_steps=wt::DEFAULT_STEPS, tefi_source="correlation"
))]
#[allow(clippy::too_many_arguments)]
fn sweep(
    py: Python<'_>,
    embeddings: &PyEmbeddingMatrix,
    truth: Option<Vec<usize>>,
    depth_min: usize,
    depth_max: Option<usize>,
    depth_step: usize,
    weights: (f64, f64),
    raw_nmi: bool,
    window: usize,
    tau: usize,
    delta_t: f64,
    max_order: usize,
    use_order: usize,
    walktrap_steps: usize,
    tefi_source: &str,
) -> PyResult<PyTrace> {
    let cfg = SweepConfig {
        depth_min,
        depth_max,
        depth_step,
        glla: GllaConfig {
            n: window,
            tau,
            delta_t,
            max_order,
            use_order,
        },
        weights: CompositeWeights::new(weights.0, weights.1).map_err(err)?,
        estimator: estimator(walktrap_steps, tefi_source)?,
        normalize_nmi: !raw_nmi,
    };
    let truth = partition(truth);
    py.allow_threads(|| landscape::sweep(&embeddings.0, truth.as_ref(), &cfg))
        .map(PyTrace)
        .map_err(err)
}

/// Cross-sectional EGA on the full embedding vectors.
#[pyfunction]
#[pyo3(signature = (embeddings, truth=None, walktrap_steps=wt::DEFAULT_STEPS, tefi_source="correlation"))]
fn ega<'py>(
    py: Python<'py>,
    embeddings: &PyEmbeddingMatrix,
    truth: Option<Vec<usize>>,
    walktrap_steps: usize,
    tefi_source: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = estimator(walktrap_steps, tefi_source)?;
    let truth = partition(truth);
    let r = pipeline::ega_cross_sectional(&embeddings.0, truth.as_ref(), &opts).map_err(err)?;
    result_dict(py, &r)
}

/// DynEGA at a single depth.
#[pyfunction]
#[pyo3(signature = (embeddings, depth, truth=None, window=5, tau=1, delta_t=1.0, use_order=1))]
fn dynega_at_depth<'py>(
    py: Python<'py>,
    embeddings: &PyEmbeddingMatrix,
    depth: usize,
    truth: Option<Vec<usize>>,
    window: usize,
    tau: usize,
    delta_t: f64,
    use_order: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = GllaConfig {
        n: window,
        tau,
        delta_t,
        use_order,
        ..GllaConfig::default()
    };
    cfg.validate().map_err(err)?;
    let truth = partition(truth);
    let r = pipeline::dynega_at_depth(&embeddings.0, depth, &cfg, truth.as_ref(), &EstimatorOptions::default());
    result_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (n=5, delta_t=1.0, max_order=2))]
fn glla_weights(n: usize, delta_t: f64, max_order: usize) -> PyResult<Vec<Vec<f64>>> {
    glla::glla_weights(n, delta_t, max_order).map(|l| to_rows(&l)).map_err(err)
}

/// Derivative estimates (columns: orders 0..=max_order) for every embedded window of `series`.
#[pyfunction]
#[pyo3(signature = (series, n=5, tau=1, delta_t=1.0, max_order=2))]
fn glla_derivatives(series: Vec<f64>, n: usize, tau: usize, delta_t: f64, max_order: usize) -> PyResult<Vec<Vec<f64>>> {
    let x = glla::time_delay_embed(&series, n, tau).map_err(err)?;
    let l = glla::glla_weights(n, delta_t, max_order).map_err(err)?;
    glla::glla_derivatives(&x, &l).map(|y| to_rows(&y)).map_err(err)
}

/// Pearson correlations between the columns of `rows` (observations by variables).
#[pyfunction]
fn correlation_matrix(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let c = netfilter::correlation_matrix(&to_matrix(&rows)?).map_err(err)?;
    Ok(to_rows(c.matrix()))
}

/// Returns `(edges, insertion_order)` with edges as `(u, v, weight)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn tmfg(similarity: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize, f64)>, Vec<usize>)> {
    let r = CorrMatrix::from_matrix(to_matrix(&similarity)?).map_err(err)?;
    let t = netfilter::tmfg(&r).map_err(err)?;
    let edges = t
        .network
        .edges()
        .iter()
        .map(|&(u, v)| (u, v, t.network.weight(u, v)))
        .collect();
    Ok((edges, t.insertion_order))
}

#[pyfunction]
#[pyo3(signature = (weights, steps=wt::DEFAULT_STEPS))]
fn walktrap(weights: Vec<Vec<f64>>, steps: usize) -> PyResult<Vec<usize>> {
    let net = Network::from_dense(&to_matrix(&weights)?);
    wt::walktrap(&net, steps).map(|p| p.labels().to_vec()).map_err(err)
}

#[pyfunction]
fn modularity(weights: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    let net = Network::from_dense(&to_matrix(&weights)?);
    if labels.len() != net.n_nodes() {
        return Err(err("one label per node is required"));
    }
    Ok(wt::modularity(&net, &Partition::from_labels(labels)))
}

#[pyfunction]
fn von_neumann_entropy(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    fitmetrics::von_neumann_entropy(&to_matrix(&matrix)?).map_err(err)
}

#[pyfunction]
fn tefi(correlation: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    fitmetrics::tefi(&to_matrix(&correlation)?, &Partition::from_labels(labels)).map_err(err)
}

#[pyfunction]
fn nmi(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    fitmetrics::nmi(&Partition::from_labels(a), &Partition::from_labels(b))
        .map(|s| s.value())
        .map_err(err)
}

/// Planted-structure embeddings; returns the matrix and the true labels.
#[pyfunction]
#[pyo3(signature = (
    items_per_dimension, seed=0, n_dimensions=5, total_depth=1536, signal_band=(0, 60),
    within_load=0.6, noise_sd=1.0, secondary_bands=vec![(700, 740, 0.3)]
))]
#[allow(clippy::too_many_arguments)]
fn synthetic_pool(
    items_per_dimension: usize,
    seed: u64,
    n_dimensions: usize,
    total_depth: usize,
    signal_band: (usize, usize),
    within_load: f64,
    noise_sd: f64,
    secondary_bands: Vec<(usize, usize, f64)>,
) -> PyResult<(PyEmbeddingMatrix, Vec<usize>)> {
    let spec = SyntheticSpec {
        n_dimensions,
        items_per_dimension,
        total_depth,
        signal_band,
        within_load,
        noise_sd,
        secondary_bands: secondary_bands
            .into_iter()
            .map(|(start, end, load)| Band { start, end, load })
            .collect(),
        seed,
    };
    spec.validate().map_err(err)?;
    let (m, truth) = simgen::generate_synthetic_pool(&spec);
    Ok((PyEmbeddingMatrix(m), truth.labels().to_vec()))
}

/// Monte Carlo over `k_grid` on the default shallow-signal template; returns per-k summaries.
#[pyfunction]
#[pyo3(signature = (k_grid, iterations, seed=0, depth_min=3, depth_max=None, depth_step=5, out_dir=None))]
fn monte_carlo<'py>(
    py: Python<'py>,
    k_grid: Vec<usize>,
    iterations: usize,
    seed: u64,
    depth_min: usize,
    depth_max: Option<usize>,
    depth_step: usize,
    out_dir: Option<PathBuf>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = MonteCarloConfig {
        k_grid,
        iterations,
        sweep: SweepConfig {
            depth_min,
            depth_max,
            depth_step,
            ..SweepConfig::default()
        },
        base_seed: seed,
    };
    let template = SyntheticSpec::shallow_signal(1, seed);
    let results = py
        .allow_threads(|| simgen::monte_carlo(&cfg, &template, out_dir.as_deref()))
        .map_err(err)?;
    results
        .aggregates
        .iter()
        .map(|g| {
            let d = PyDict::new_bound(py);
            d.set_item("k", g.k)?;
            d.set_item("cells", g.cells)?;
            d.set_item("failed_cells", g.failed_cells)?;
            d.set_item("mean_baseline_nmi", g.mean_baseline_nmi)?;
            d.set_item("mean_optimized_nmi", g.mean_optimized_nmi)?;
            d.set_item("delta_nmi", g.delta_nmi())?;
            d.set_item("mean_depth_nmi_opt", g.mean_depth_nmi_opt)?;
            d.set_item("mean_depth_tefi_opt", g.mean_depth_tefi_opt)?;
            d.set_item("mean_depth_composite_opt", g.mean_depth_composite_opt)?;
            d.set_item("share_nmi_shallower", g.share_nmi_shallower)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "dynega")]
fn dynega_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyItemPool>()?;
    m.add_class::<PyEmbeddingMatrix>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(ega, m)?)?;
    m.add_function(wrap_pyfunction!(dynega_at_depth, m)?)?;
    m.add_function(wrap_pyfunction!(glla_weights, m)?)?;
    m.add_function(wrap_pyfunction!(glla_derivatives, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(tmfg, m)?)?;
    m.add_function(wrap_pyfunction!(walktrap, m)?)?;
    m.add_function(wrap_pyfunction!(modularity, m)?)?;
    m.add_function(wrap_pyfunction!(von_neumann_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(tefi, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_pool, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}
