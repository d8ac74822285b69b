//! Python bindings: configuration, dataset generation, models, federated
//! training and evaluation.

use std::path::PathBuf;

use beamfl::checkpoint;
use beamfl::config::RunConfig;
use beamfl::dataset::{self, design_matrix};
use beamfl::eval::{self, MetricsReport};
use beamfl::fl;
use beamfl::nn::{self, ModelKind, ModelParams};
use beamfl::pipeline;
use beamfl::Error;
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(beamfl, BeamflError, PyException);
create_exception!(beamfl, DivergenceError, BeamflError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::Range { .. } | Error::Domain(_) | Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        other => BeamflError::new_err(other.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    kind.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown model kind {kind:?}; use \"mlp\" or \"gnn\"")))
}

fn to_matrix(rows: Vec<Vec<f64>>, width: usize) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * width);
    for (i, r) in rows.into_iter().enumerate() {
        if r.len() != width {
            return Err(PyValueError::new_err(format!(
                "row {i} has {} columns, expected {width}",
                r.len()
            )));
        }
        flat.extend(r);
    }
    Ok(Array2::from_shape_vec((n, width), flat).expect("shape checked"))
}

type ShardIndices = (usize, Vec<usize>, Vec<usize>);

fn rows_of(m: ndarray::ArrayView2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

/// Run configuration. Defaults reproduce the reference scenario.
#[pyclass(name = "Config", module = "beamfl", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    /// Every validation problem; empty when the configuration is usable.
    fn validation_errors(&self) -> Vec<String> {
        self.inner.validation_errors()
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    #[getter]
    fn num_snapshots(&self) -> usize {
        self.inner.constellation.num_snapshots
    }

    #[setter]
    fn set_num_snapshots(&mut self, n: usize) {
        self.inner.constellation.num_snapshots = n;
    }

    #[getter]
    fn num_ues(&self) -> usize {
        self.inner.ground.num_ues
    }

    #[setter]
    fn set_num_ues(&mut self, n: usize) {
        self.inner.ground.num_ues = n;
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.fl.rounds
    }

    #[setter]
    fn set_rounds(&mut self, r: usize) {
        self.inner.fl.rounds = r;
    }

    #[getter]
    fn local_epochs(&self) -> usize {
        self.inner.fl.local_epochs
    }

    #[setter]
    fn set_local_epochs(&mut self, e: usize) {
        self.inner.fl.local_epochs = e;
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.fl.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, b: usize) {
        self.inner.fl.batch_size = b;
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.fl.learning_rate
    }

    #[setter]
    fn set_learning_rate(&mut self, lr: f64) {
        self.inner.fl.learning_rate = lr;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(master_seed={}, num_snapshots={}, rounds={}, local_epochs={})",
            self.inner.master_seed,
            self.inner.constellation.num_snapshots,
            self.inner.fl.rounds,
            self.inner.fl.local_epochs
        )
    }
}

/// Labelled link samples with their sidecar metadata.
#[pyclass(name = "Dataset", module = "beamfl")]
struct PyDataset {
    inner: dataset::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn generate(config: &PyConfig) -> PyResult<Self> {
        config.inner.validate().map_err(to_py)?;
        dataset::generate(&config.inner.scenario(), config.inner.master_seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        dataset::load(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Writes the CSV and its sidecar next to it.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        dataset::save(&self.inner, &path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    #[getter]
    fn n_beams(&self) -> usize {
        self.inner.meta.n_beams
    }

    #[getter]
    fn config_hash(&self) -> u64 {
        self.inner.meta.config_hash
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.label).collect()
    }

    fn plane_ids(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.plane_id).collect()
    }

    fn elevations(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.elevation).collect()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.features.to_vec()).collect()
    }

    /// Model inputs for the given sample indices (all samples by default).
    #[pyo3(signature = (kind, indices=None))]
    fn inputs(&self, kind: &str, indices: Option<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
        let kind = parse_kind(kind)?;
        let idx = self.checked_indices(indices)?;
        Ok(rows_of(design_matrix(&self.inner, &idx, kind).view()))
    }

    /// `(plane_id, train_indices, test_indices)` per client.
    #[pyo3(signature = (test_fraction=0.2))]
    fn partition(&self, test_fraction: f64) -> PyResult<Vec<ShardIndices>> {
        let (shards, _) =
            dataset::partition(&self.inner, test_fraction, dataset::SplitMode::Temporal).map_err(to_py)?;
        Ok(shards.into_iter().map(|s| (s.plane_id, s.train, s.test)).collect())
    }

    /// Fraction of samples whose label is reproduced by re-running the
    /// beam search on the stored geometry.
    fn replay_agreement(&self, config: &PyConfig) -> PyResult<f64> {
        let replay =
            dataset::replay_labels(&self.inner, &config.inner.channel, &config.inner.codebook).map_err(to_py)?;
        let hits = replay
            .iter()
            .zip(&self.inner.samples)
            .filter(|((label, _), s)| *label == s.label)
            .count();
        Ok(hits as f64 / self.inner.samples.len().max(1) as f64)
    }
}

impl PyDataset {
    fn checked_indices(&self, indices: Option<Vec<usize>>) -> PyResult<Vec<usize>> {
        let n = self.inner.samples.len();
        let idx = indices.unwrap_or_else(|| (0..n).collect());
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(PyValueError::new_err(format!(
                "sample index {bad} out of range for {n} samples"
            )));
        }
        Ok(idx)
    }
}

/// A parameterised MLP or GNN beam classifier.
#[pyclass(name = "Model", module = "beamfl")]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    /// Glorot-initialised model; the seed defaults to the configured one.
    #[staticmethod]
    #[pyo3(signature = (config, kind, seed=None))]
    fn init(config: &PyConfig, kind: &str, seed: Option<u64>) -> PyResult<Self> {
        let arch = config.inner.arch(parse_kind(kind)?);
        let errs = arch.validate();
        if !errs.is_empty() {
            return Err(to_py(Error::Validation(errs)));
        }
        let seed = seed.unwrap_or_else(|| fl::init_seed(&config.inner.fl));
        Ok(Self {
            inner: nn::init(&arch, seed),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    /// Writes a checkpoint and returns its size in bytes.
    fn save(&self, path: PathBuf) -> PyResult<u64> {
        checkpoint::save(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.arch.kind().to_string()
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.arch.input_width()
    }

    #[getter]
    fn n_beams(&self) -> usize {
        self.inner.arch.n_beams()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.flat.clone()
    }

    #[setter]
    fn set_params(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.inner = ModelParams::from_flat(self.inner.arch.clone(), flat).map_err(to_py)?;
        Ok(())
    }

    /// Per-beam logits for a batch of input rows.
    fn forward(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_matrix(inputs, self.inner.arch.input_width())?;
        Ok(rows_of(nn::forward(&self.inner, x.view()).map_err(to_py)?.view()))
    }

    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let x = to_matrix(inputs, self.inner.arch.input_width())?;
        Ok(nn::predict(nn::forward(&self.inner, x.view()).map_err(to_py)?.view()))
    }

    /// Mean cross-entropy and its gradient in flat parameter order.
    fn loss_and_grad(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<f64>)> {
        let x = to_matrix(inputs, self.inner.arch.input_width())?;
        nn::loss_and_grad(&self.inner, x.view(), &labels).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={}, params={})",
            self.inner.arch.kind(),
            self.inner.param_count()
        )
    }
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("model", r.model.to_string())?;
    d.set_item("n_test", r.n_test)?;
    d.set_item("top1", r.top1)?;
    d.set_item("top3", r.top3)?;
    d.set_item("client_mean_top1", r.per_client.mean)?;
    d.set_item("switching_gap", r.switching_gap())?;
    d.set_item("train_time_s", r.train_time_s)?;
    d.set_item("param_bytes", r.param_bytes)?;
    let bins: Vec<(f64, f64, Option<f64>, usize)> = r
        .elevation_bins
        .iter()
        .map(|b| (b.bin_lo, b.bin_hi, b.top1, b.n))
        .collect();
    d.set_item("elevation_accuracy", bins)?;
    Ok(d)
}

/// Generates the dataset under `out_dir`; returns per-plane sample counts.
#[pyfunction]
fn simulate(config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<(usize, usize)>> {
    pipeline::simulate(&config.inner, &out_dir)
        .map(|s| s.per_plane)
        .map_err(to_py)
}

/// Federated training on the dataset in `out_dir`. Returns the trained
/// model and the per-round global test top-1.
#[pyfunction]
#[pyo3(signature = (config, out_dir, kind="gnn"))]
fn train(py: Python<'_>, config: &PyConfig, out_dir: PathBuf, kind: &str) -> PyResult<(PyModel, Vec<Option<f64>>)> {
    let kind = parse_kind(kind)?;
    let cfg = config.inner.clone();
    let t = py
        .detach(move || pipeline::train(&cfg, &out_dir, kind))
        .map_err(to_py)?;
    let curve = t.history.rounds.iter().map(|r| r.global_top1).collect();
    Ok((PyModel { inner: t.params }, curve))
}

/// Evaluates every checkpoint in `out_dir` and writes the report files.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, config: &PyConfig, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let reports = py
        .detach(move || {
            let paths = pipeline::existing_checkpoints(&cfg, &out_dir);
            pipeline::evaluate(&cfg, &out_dir, &paths)
        })
        .map_err(to_py)?;
    reports.iter().map(|r| report_dict(py, r)).collect()
}

/// Compares analytic and central-difference gradients on a random batch.
#[pyfunction]
#[pyo3(signature = (config, kind, seed=None))]
fn grad_check<'py>(py: Python<'py>, config: &PyConfig, kind: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let arch = config.inner.arch(parse_kind(kind)?);
    let seed = seed.unwrap_or(config.inner.master_seed);
    let r = nn::grad_check(&arch, seed, config.inner.eval.grad_check_batch).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("max_rel_error", r.max_rel_error)?;
    d.set_item("max_abs_error", r.max_abs_error)?;
    d.set_item("checked", r.checked)?;
    d.set_item("skipped", r.skipped)?;
    Ok(d)
}

/// Sample-weighted average of flat parameter vectors.
#[pyfunction]
fn fedavg(updates: Vec<(Vec<f64>, usize)>) -> PyResult<Vec<f64>> {
    let borrowed: Vec<(&[f64], usize)> = updates.iter().map(|(p, n)| (p.as_slice(), *n)).collect();
    fl::fedavg(&borrowed).map_err(to_py)
}

/// Fraction of rows whose label ranks within the top `k` logits.
#[pyfunction]
fn topk_accuracy(logits: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<f64> {
    let width = logits.first().map_or(0, Vec::len);
    let m = to_matrix(logits, width)?;
    eval::topk_accuracy(m.view(), &labels, k).map_err(to_py)
}

#[pymodule(name = "beamfl")]
pub fn beamfl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BeamflError", m.py().get_type::<BeamflError>())?;
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    Ok(())
}
