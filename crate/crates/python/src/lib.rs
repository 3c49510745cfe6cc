//! Python bindings: synthetic data, training, evaluation and prediction.

use std::path::PathBuf;

use ::crimecast as core;
use core::featurize::{ClassWeights, FeatureSet, Task};
use core::pipeline::{self, ModelArtifact, ModelKind, PipelineConfig, Predictions};
use core::synth::SynthConfig;
use core::Error;
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>, d: usize) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(PyValueError::new_err(format!(
            "row {bad} has {} values, expected {d}",
            rows[bad].len()
        )));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A trained model artifact.
#[pyclass(module = "crimecast", frozen)]
struct Model {
    artifact: ModelArtifact,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        Ok(Model {
            artifact: ModelArtifact::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.artifact.save(&path).map_err(to_py)
    }

    #[getter]
    fn model_type(&self) -> &'static str {
        self.artifact.model.kind().as_str()
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.artifact.task.as_str()
    }

    #[getter]
    fn feature_set(&self) -> &'static str {
        self.artifact.feature_set.as_str()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.artifact.feature_names.clone()
    }

    /// Class labels for classifiers, values for regressors.
    fn predict(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
        let x = matrix(rows, self.artifact.feature_names.len())?;
        let out = py.detach(|| self.artifact.predict(x.view())).map_err(to_py)?;
        Ok(match out {
            Predictions::Classes { labels, .. } => labels.into_pyobject(py)?.into_any().unbind(),
            Predictions::Values(v) => v.into_pyobject(py)?.into_any().unbind(),
        })
    }

    /// Per-class probabilities, one list per row, columns ordered by `classes`.
    fn predict_proba(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<(Vec<u32>, Vec<Vec<f64>>)> {
        let x = matrix(rows, self.artifact.feature_names.len())?;
        match py.detach(|| self.artifact.predict(x.view())).map_err(to_py)? {
            Predictions::Classes { classes, proba, .. } => {
                Ok((classes, proba.rows().into_iter().map(|r| r.to_vec()).collect()))
            }
            Predictions::Values(_) => Err(PyValueError::new_err("regression models have no probabilities")),
        }
    }

    /// Metrics on a cleaned dataset or feature table, as a dict.
    #[pyo3(signature = (data, all_rows = false))]
    fn evaluate<'py>(&self, py: Python<'py>, data: PathBuf, all_rows: bool) -> PyResult<Bound<'py, PyAny>> {
        let metrics = py
            .detach(|| {
                let (table, _) =
                    pipeline::load_table(&data, self.artifact.feature_set, Some(&self.artifact.vocabulary))?;
                pipeline::evaluate(&self.artifact, &table, all_rows).map(|o| o.metrics)
            })
            .map_err(to_py)?;
        json_to_py(py, &metrics)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(model_type='{}', task='{}', feature_set='{}')",
            self.model_type(),
            self.task(),
            self.feature_set()
        )
    }
}

/// Writes a synthetic dataset (and its truth file) and returns the row count.
#[pyfunction]
#[pyo3(signature = (out, rows = 50_000, seed = 42, truth = None))]
fn synth(py: Python<'_>, out: PathBuf, rows: usize, seed: u64, truth: Option<PathBuf>) -> PyResult<usize> {
    let cfg = SynthConfig {
        rows,
        seed,
        ..SynthConfig::default()
    };
    let truth_path = truth.unwrap_or_else(|| out.with_file_name("truth.csv"));
    py.detach(|| -> core::Result<usize> {
        let (records, truth) = core::synth::generate_synthetic(&cfg)?;
        pipeline::write_atomic(&out, |w| core::ingest::write_records_csv(&records, w))?;
        pipeline::write_atomic(&truth_path, |w| truth.write_csv(w))?;
        Ok(records.len())
    })
    .map_err(to_py)
}

/// Trains a model on a cleaned dataset or feature table.
#[pyfunction]
#[pyo3(signature = (data, model = "rf", task = "binary", features = "exact", seed = 42, config = None))]
fn train(
    py: Python<'_>,
    data: PathBuf,
    model: &str,
    task: &str,
    features: &str,
    seed: u64,
    config: Option<PathBuf>,
) -> PyResult<Model> {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(&p).map_err(to_py)?,
        None => PipelineConfig::default(),
    };
    cfg.model = parse::<ModelKind>(model)?;
    cfg.task = parse::<Task>(task)?;
    cfg.feature_set = parse::<FeatureSet>(features)?;
    cfg.seed = seed;
    cfg.forest.seed = seed;
    cfg.mlp.seed = seed;
    cfg.validate().map_err(to_py)?;
    let artifact = py
        .detach(|| {
            let (table, vocab) = pipeline::load_table(&data, cfg.feature_set, None)?;
            pipeline::train_model(&table, &vocab, &cfg).map(|o| o.artifact)
        })
        .map_err(to_py)?;
    Ok(Model { artifact })
}

/// Area under the ROC curve of `scores` against 0/1 `labels`.
#[pyfunction]
fn roc_auc(labels: Vec<u32>, scores: Vec<f64>) -> PyResult<f64> {
    core::eval::roc_curve(&labels, &scores).map(|c| c.auc).map_err(to_py)
}

/// Balanced weights `n / (k * n_c)` keyed by label.
#[pyfunction]
fn balanced_class_weights<'py>(py: Python<'py>, labels: Vec<u32>) -> PyResult<Bound<'py, PyDict>> {
    let cw = ClassWeights::balanced(&labels).map_err(to_py)?;
    let out = PyDict::new(py);
    for (label, w) in cw.as_map() {
        out.set_item(label, w)?;
    }
    Ok(out)
}

/// Runs the command-line interface in-process and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("crimecast".to_string()).chain(args).collect();
    py.detach(|| pipeline::run_cli(argv))
}

#[pymodule]
#[pyo3(name = "crimecast")]
fn crimecast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_class_weights, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
