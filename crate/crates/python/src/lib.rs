//! Python bindings for `damper_twin`.
//!
//! Build with `cargo build --release -p damper-twin-python --features extension-module`
//! and copy `libdamper_twin_py.so` to `damper_twin_py.so` on the import path.

use std::collections::BTreeSet;
use std::path::PathBuf;

use damper_twin::dataset::Column;
use damper_twin::{self as dt, Error, RunConfig, StageToggles};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn load_config(path: Option<PathBuf>) -> PyResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), |p| RunConfig::load(p).map_err(to_py))
}

fn column(name: &str) -> PyResult<Column> {
    name.parse().map_err(to_py)
}

/// Raw time-series records, grouped into contiguous runs.
#[pyclass(name = "RawDataset", module = "damper_twin_py", skip_from_py_object)]
#[derive(Clone)]
struct RawDataset(dt::RawDataset);

#[pymethods]
impl RawDataset {
    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        dt::RawDataset::load_csv(path).map(Self).map_err(to_py)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_csv(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn run_ids(&self) -> Vec<u32> {
        self.0.run_ids()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        Ok(self.0.column(column(name)?))
    }

    /// Returns `(train, test)` with the given runs held out.
    fn split(&self, held_out: Vec<u32>) -> PyResult<(Self, Self)> {
        let runs: BTreeSet<u32> = held_out.into_iter().collect();
        let (train, test) = dt::split_by_runs(&self.0, &runs).map_err(to_py)?;
        Ok((Self(train), Self(test)))
    }
}

/// Scaled examples ready for training or evaluation.
#[pyclass(name = "PreparedDataset", module = "damper_twin_py", skip_from_py_object)]
#[derive(Clone)]
struct PreparedDataset(dt::PreparedDataset);

#[pymethods]
impl PreparedDataset {
    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        dt::PreparedDataset::load_csv(path).map(Self).map_err(to_py)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_csv(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn inputs(&self) -> Vec<[f64; 3]> {
        self.0.inputs()
    }

    fn targets(&self) -> Vec<f64> {
        self.0.targets()
    }
}

/// Per-column min/max fitted on a training partition.
#[pyclass(name = "ScalingState", module = "damper_twin_py", skip_from_py_object)]
#[derive(Clone)]
struct ScalingState(dt::ScalingState);

#[pymethods]
impl ScalingState {
    #[staticmethod]
    fn fit(train: &RawDataset) -> PyResult<Self> {
        dt::ScalingState::fit(&train.0).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load_json(path: PathBuf) -> PyResult<Self> {
        dt::ScalingState::load_json(path).map(Self).map_err(to_py)
    }

    fn save_json(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_json(path).map_err(to_py)
    }

    fn range(&self, name: &str) -> PyResult<(f64, f64)> {
        let r = self.0.range(column(name)?);
        Ok((r.min, r.max))
    }

    fn scale(&self, name: &str, value: f64) -> PyResult<f64> {
        Ok(self.0.scale(column(name)?, value))
    }

    fn invert(&self, name: &str, value: f64) -> PyResult<f64> {
        Ok(self.0.invert(column(name)?, value))
    }

    fn apply(&self, data: &RawDataset) -> PreparedDataset {
        PreparedDataset(self.0.apply(&data.0))
    }
}

/// Fully connected regressor mapping (V, I, displacement) to the next delta.
#[pyclass(name = "MlpModel", module = "damper_twin_py", skip_from_py_object)]
#[derive(Clone)]
struct MlpModel(dt::MlpModel);

fn mlp_config(layer_sizes: Option<Vec<usize>>, activation: &str, epochs: Option<usize>, seed: Option<u64>) -> PyResult<dt::MlpConfig> {
    let mut cfg = dt::MlpConfig::default();
    if let Some(sizes) = layer_sizes {
        cfg.layer_sizes = sizes;
    }
    cfg.activation = serde_json::from_value(serde_json::Value::from(activation))
        .map_err(|_| PyValueError::new_err(format!("unknown activation {activation:?}")))?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[pymethods]
impl MlpModel {
    #[new]
    #[pyo3(signature = (layer_sizes=None, activation="tanh", seed=None))]
    fn new(layer_sizes: Option<Vec<usize>>, activation: &str, seed: Option<u64>) -> PyResult<Self> {
        let cfg = mlp_config(layer_sizes, activation, None, seed)?;
        dt::MlpModel::init(&cfg).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load_json(path: PathBuf) -> PyResult<Self> {
        dt::MlpModel::load_json(path).map(Self).map_err(to_py)
    }

    fn save_json(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_json(path).map_err(to_py)
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.0.layer_sizes().to_vec()
    }

    fn forward(&self, x: [f64; 3]) -> PyResult<f64> {
        self.0.forward(&x).map_err(to_py)
    }

    fn predict(&self, xs: Vec<[f64; 3]>) -> PyResult<Vec<f64>> {
        self.0.forward_batch(&xs).map_err(to_py)
    }

    /// Trains a copy of this model; returns `(model, per-epoch losses)`.
    #[pyo3(signature = (data, epochs=None, seed=None))]
    fn train(&self, py: Python<'_>, data: &PreparedDataset, epochs: Option<usize>, seed: Option<u64>) -> PyResult<(Self, Vec<f64>)> {
        let mut cfg = dt::MlpConfig {
            layer_sizes: self.0.layer_sizes().to_vec(),
            activation: self.0.activation(),
            ..Default::default()
        };
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let out = py.detach(|| dt::train(&self.0, &data.0, &cfg)).map_err(to_py)?;
        Ok((Self(out.model), out.loss_history))
    }
}

/// Simulates the bench program; `config` is an optional run-config JSON path.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn generate(py: Python<'_>, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<RawDataset> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.data_seed = s;
    }
    py.detach(|| cfg.generate()).map(RawDataset).map_err(to_py)
}

type StageRows = Vec<(String, usize, usize)>;

/// Runs the preparation stages (`"all"`, `"none"` or e.g. `"index,augment"`).
/// Returns the prepared data and `(stage, rows_in, rows_out)` log rows.
#[pyfunction]
#[pyo3(signature = (raw, stages, scaling, config=None))]
fn run_pipeline(
    raw: &RawDataset,
    stages: &str,
    scaling: &ScalingState,
    config: Option<PathBuf>,
) -> PyResult<(PreparedDataset, StageRows)> {
    let cfg = load_config(config)?;
    let toggles = StageToggles::parse(stages).map_err(to_py)?;
    let out = dt::run_pipeline(&raw.0, toggles, &cfg.pipeline, &scaling.0).map_err(to_py)?;
    let log = out
        .log
        .entries()
        .iter()
        .map(|e| (e.stage.name().to_string(), e.rows_in, e.rows_out))
        .collect();
    Ok((PreparedDataset(out.data), log))
}

fn metrics_dict<'py>(py: Python<'py>, m: &dt::MetricReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r2", m.r2)?;
    d.set_item("mse", m.mse)?;
    d.set_item("mae", m.mae)?;
    d.set_item("n", m.n)?;
    Ok(d)
}

/// MSE, MAE and R² (None when the targets are constant).
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = dt::evaluate(&y_true, &y_pred).map_err(to_py)?;
    metrics_dict(py, &m)
}

/// Runs the full ablation and returns the report CSV text.
#[pyfunction]
#[pyo3(signature = (config=None, artifacts=None))]
fn run_ablation(py: Python<'_>, config: Option<PathBuf>, artifacts: Option<PathBuf>) -> PyResult<String> {
    let cfg = load_config(config)?;
    let report = py
        .detach(|| -> dt::Result<_> {
            let data = cfg.generate()?;
            let report = dt::run_ablation(&cfg.ablation_spec(), &data)?;
            if let Some(dir) = artifacts {
                report.save_artifacts(dir)?;
            }
            Ok(report)
        })
        .map_err(to_py)?;
    Ok(report.to_csv())
}

#[pymodule]
fn damper_twin_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RawDataset>()?;
    m.add_class::<PreparedDataset>()?;
    m.add_class::<ScalingState>()?;
    m.add_class::<MlpModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    Ok(())
}
