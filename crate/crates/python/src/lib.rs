//! Python bindings. Long-running calls release the interpreter lock.

use std::path::PathBuf;

use microdesign::autodiff::Tensor;
use microdesign::dataset::Dataset as CoreDataset;
use microdesign::design::{self, DesignReport as CoreReport, DesignRun, DesignTarget};
use microdesign::microgen::{GenConfig, Microstructure as CoreMicro};
use microdesign::networks::{Model as CoreModel, ModelConfig};
use microdesign::oracle;
use microdesign::training::{self, TrainConfig};
use microdesign::Task;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: microdesign::Error) -> PyErr {
    match e {
        microdesign::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_task(s: &str) -> PyResult<Task> {
    s.parse().map_err(|e: microdesign::Error| err(e))
}

/// Binary two-phase image; `phase` is row-major with row index = y.
#[pyclass(name = "Microstructure", module = "pymicrodesign", skip_from_py_object)]
#[derive(Clone)]
pub struct Microstructure {
    inner: CoreMicro,
}

#[pymethods]
impl Microstructure {
    #[new]
    fn new(k: usize, phase: Vec<u8>) -> PyResult<Self> {
        Ok(Microstructure {
            inner: CoreMicro::new(k, phase).map_err(err)?,
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn phase(&self) -> Vec<u8> {
        self.inner.phase().to_vec()
    }

    fn volume_fraction(&self) -> f64 {
        self.inner.volume_fraction()
    }

    /// `(κ_h, κ_v)` from the finite-volume oracle on a `grid × grid` mesh.
    #[pyo3(signature = (grid = 64))]
    fn effective_conductivity(&self, py: Python<'_>, grid: usize) -> PyResult<(f64, f64)> {
        let m = self.inner.clone();
        let p = py.detach(move || oracle::effective_conductivity(&m, grid)).map_err(err)?;
        Ok((p.kappa_h, p.kappa_v))
    }

    fn __repr__(&self) -> String {
        format!("Microstructure(k={}, vf={:.3})", self.inner.k(), self.inner.volume_fraction())
    }
}

#[pyclass(name = "Dataset", module = "pymicrodesign")]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    /// Generate `n` seeded `k × k` microstructures.
    #[staticmethod]
    #[pyo3(signature = (n, k = 32, seed = 0))]
    fn generate(py: Python<'_>, n: usize, k: usize, seed: u64) -> PyResult<Self> {
        let cfg = GenConfig::new(n, k, seed);
        let inner = py.detach(move || CoreDataset::generate(&cfg)).map_err(err)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: CoreDataset::read(&path).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(err)
    }

    #[pyo3(signature = (grid = 64, tasks = vec!["property".to_string(), "field".to_string()]))]
    fn label(&mut self, py: Python<'_>, grid: usize, tasks: Vec<String>) -> PyResult<()> {
        let tasks = tasks.iter().map(|t| parse_task(t)).collect::<PyResult<Vec<_>>>()?;
        let inner = &mut self.inner;
        py.detach(|| inner.label(grid, &tasks)).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn grid(&self) -> Option<usize> {
        self.inner.grid()
    }

    #[getter]
    fn phis(&self) -> Vec<f64> {
        self.inner.meta.phis.clone()
    }

    fn microstructure(&self, index: usize) -> PyResult<Microstructure> {
        let m = self.inner.micro.get(index).ok_or_else(|| PyValueError::new_err("index out of range"))?;
        Ok(Microstructure { inner: m.clone() })
    }

    fn kappa(&self, index: usize) -> PyResult<(f64, f64)> {
        let [h, v] = self.inner.kappa(index).map_err(err)?;
        Ok((h, v))
    }

    /// Label channels of one sample, each `grid²` values.
    fn fields(&self, task: &str, index: usize) -> PyResult<Vec<Vec<f32>>> {
        let task = parse_task(task)?;
        let g = self.inner.grid().ok_or_else(|| PyValueError::new_err("dataset is unlabeled"))?;
        let f = self.inner.sample_fields(task, index).map_err(err)?;
        Ok(f.chunks(g * g).map(<[f32]>::to_vec).collect())
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        Ok(Dataset {
            inner: self.inner.subset(&indices).map_err(err)?,
        })
    }
}

#[pyclass(name = "Model", module = "pymicrodesign")]
pub struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: CoreModel::load(&path).map_err(err)?.0,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path, serde_json::Value::Null).map_err(err)
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.inner.config.task.name()
    }

    #[getter]
    fn d_beta(&self) -> usize {
        self.inner.config.d_beta
    }

    /// Latent codes, one row per microstructure.
    fn encode(&self, micro: Vec<PyRef<'_, Microstructure>>) -> PyResult<Vec<Vec<f64>>> {
        let refs: Vec<&CoreMicro> = micro.iter().map(|m| &m.inner).collect();
        let b = self.inner.encode_micro(&refs).map_err(err)?;
        Ok((0..b.rows()).map(|r| b.row_slice(r).to_vec()).collect())
    }

    fn decode(&self, beta: Vec<Vec<f64>>) -> PyResult<Vec<Microstructure>> {
        let t = rows_to_tensor(&beta)?;
        let ms = self.inner.decode_microstructures(&t).map_err(err)?;
        Ok(ms.into_iter().map(|inner| Microstructure { inner }).collect())
    }

    /// Surrogate `(κ_h, κ_v)` per latent row (property task).
    #[pyo3(signature = (beta, grid = 64))]
    fn predicted_kappa(&self, beta: Vec<Vec<f64>>, grid: usize) -> PyResult<Vec<(f64, f64)>> {
        let t = rows_to_tensor(&beta)?;
        let k = design::predicted_kappa_values(&self.inner, &t, grid).map_err(err)?;
        Ok(k.into_iter().map(|[h, v]| (h, v)).collect())
    }
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged latent rows"));
    }
    Tensor::new(vec![rows.len(), cols], rows.concat()).map_err(err)
}

/// Train a model; `arch` is `"full"` or `"desk"`. Keyword arguments
/// override the training defaults.
#[pyfunction]
#[pyo3(signature = (data, task, epochs = 1000, arch = "full", out = None, seed = 0, batch_size = None, lr = None, lambda_pde = None, lambda_data = None, lambda_kl = None, unlabeled_only = false, data_points = None, augment = true))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    data: &Dataset,
    task: &str,
    epochs: usize,
    arch: &str,
    out: Option<PathBuf>,
    seed: u64,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lambda_pde: Option<f64>,
    lambda_data: Option<f64>,
    lambda_kl: Option<f64>,
    unlabeled_only: bool,
    data_points: Option<usize>,
    augment: bool,
) -> PyResult<(Model, Vec<f64>)> {
    let task = parse_task(task)?;
    let model_cfg = match arch {
        "full" => ModelConfig::full(data.inner.k(), task),
        "desk" => ModelConfig::desk(data.inner.k(), task),
        other => return Err(PyValueError::new_err(format!("unknown arch '{other}'"))),
    };
    let mut cfg = TrainConfig::new(task);
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg.use_labeled = !unlabeled_only;
    cfg.data_points = data_points;
    cfg.augment = augment;
    if let Some(v) = batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = lr {
        cfg.lr = v;
    }
    if let Some(v) = lambda_pde {
        cfg.lambda_pde = v;
    }
    if let Some(v) = lambda_data {
        cfg.lambda_data = v;
    }
    if let Some(v) = lambda_kl {
        cfg.lambda_kl = v;
    }
    let d = &data.inner;
    let (inner, log) = py.detach(|| training::train(d, model_cfg, &cfg, out.as_deref())).map_err(err)?;
    Ok((Model { inner }, log.iter().map(|l| l.loss.total).collect()))
}

#[pyclass(name = "DesignReport", module = "pymicrodesign")]
pub struct DesignReport {
    inner: CoreReport,
}

#[pymethods]
impl DesignReport {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(DesignReport {
            inner: CoreReport::read(&path).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(err)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = &self.inner.summary;
        let d = PyDict::new(py);
        d.set_item("evaluated", s.evaluated)?;
        d.set_item("failed", s.failed)?;
        d.set_item("degenerate", s.degenerate)?;
        d.set_item("success_rate", s.success_rate)?;
        d.set_item("mean_ratio", s.mean_ratio)?;
        d.set_item("mean_i_corr", s.mean_i_corr)?;
        d.set_item("best_i_corr", s.best_i_corr)?;
        d.set_item("mean_sensor_error", s.mean_sensor_error)?;
        Ok(d)
    }

    fn designs(&self) -> Vec<Microstructure> {
        self.inner.designs.iter().map(|m| Microstructure { inner: m.clone() }).collect()
    }

    /// Oracle `(κ_h, κ_v)` per design, `None` for failed ones.
    fn oracle_kappa(&self) -> Vec<Option<(f64, f64)>> {
        self.inner.records.iter().map(|r| r.oracle_kappa.map(|[h, v]| (h, v))).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

/// Optimize designs. `target` is a JSON target spec, e.g.
/// `{"variant": "p1", "kappa_h": [3, 4], "kappa_v": [3, 4]}`.
#[pyfunction]
#[pyo3(signature = (model, target, restarts = 50, steps = 500, seed = 0, lr = None, oracle_grid = 64))]
fn optimize(py: Python<'_>, model: &Model, target: &str, restarts: usize, steps: usize, seed: u64, lr: Option<f64>, oracle_grid: usize) -> PyResult<DesignReport> {
    let target: DesignTarget = serde_json::from_str(target).map_err(|e| PyValueError::new_err(format!("bad target: {e}")))?;
    let mut run = DesignRun {
        restarts,
        steps,
        seed,
        oracle_grid,
        ..DesignRun::default()
    };
    if let Some(v) = lr {
        run.lr = v;
    }
    let m = &model.inner;
    let inner = py.detach(|| design::optimize(m, &target, &run)).map_err(err)?;
    Ok(DesignReport { inner })
}

/// Image cross-correlation of two equal-length fields.
#[pyfunction]
fn cross_correlation(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    design::cross_correlation(&a, &b).map_err(err)
}

/// Harmonic and arithmetic bounds on κ at phase-1 volume fraction `vf`.
#[pyfunction]
fn wiener_bounds(vf: f64) -> (f64, f64) {
    oracle::wiener_bounds(vf)
}

#[pymodule]
fn pymicrodesign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Microstructure>()?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<DesignReport>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(cross_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(wiener_bounds, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
