//! Python bindings: corpus synthesis, training, evaluation, persistence and
//! interpretation. Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use nlim_core::evalharness;
use nlim_core::grammar::{self, LabeledSentence};
use nlim_core::interpreter::{self, Registry, DEMO_REGISTRY};
use nlim_core::models::{self, ArchKind, ArchSpec, Model, TrainConfig};
use nlim_core::persistence::PersistError;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};
use serde::Serialize;
use serde_json::Value;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn persist_err(e: PersistError) -> PyErr {
    match e {
        PersistError::Io(io) => PyIOError::new_err(io.to_string()),
        other => value_err(other),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

pub fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &serde_json::to_value(value).map_err(value_err)?)
}

fn corpus_to_py<'py>(py: Python<'py>, corpus: &[LabeledSentence]) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &corpus)
}

/// Intent and slot vocabulary used to resolve entities.
#[pyclass(name = "Registry", module = "nlim", frozen)]
pub struct PyRegistry {
    pub inner: Registry,
}

#[pymethods]
impl PyRegistry {
    /// The registry shipped with the demo corpus.
    #[staticmethod]
    pub fn demo() -> PyResult<Self> {
        Ok(Self { inner: Registry::parse(DEMO_REGISTRY).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        Ok(Self { inner: Registry::parse(document).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Registry::load(&path).map_err(value_err)? })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// An architecture plus its parameters.
#[pyclass(name = "Model", module = "nlim", frozen)]
pub struct PyModel {
    pub inner: Model,
}

#[pymethods]
impl PyModel {
    /// Freshly initialised, untrained parameters. `kind` accepts the flag
    /// form (`s2s-mtl`) or the upper-case name (`S2S_MTL`).
    #[staticmethod]
    #[pyo3(signature = (kind, hidden=None, seed=7))]
    fn build(kind: &str, hidden: Option<usize>, seed: u64) -> PyResult<Self> {
        let kind: ArchKind = kind.parse().map_err(value_err)?;
        let arch = ArchSpec::new(kind, hidden.unwrap_or(kind.default_hidden()));
        let params = models::build(&arch, seed).map_err(value_err)?;
        Ok(Self { inner: Model::new(arch, params).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Model::load(&path).map_err(persist_err)? })
    }

    /// Writes the model file and returns its size in bytes.
    fn save(&self, path: PathBuf) -> PyResult<usize> {
        self.inner.save(&path).map_err(persist_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.arch.kind.name()
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.arch.hidden
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.params.param_count()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn predict<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let pred = py.detach(|| self.inner.predict(text)).map_err(value_err)?;
        to_py(py, &pred)
    }

    /// Full interpretation: intent, spans and the resolved command (or the
    /// reason it could not be built).
    #[pyo3(signature = (text, registry=None))]
    fn interpret<'py>(&self, py: Python<'py>, text: &str, registry: Option<PyRef<'py, PyRegistry>>) -> PyResult<Bound<'py, PyAny>> {
        let reg = match registry {
            Some(r) => r.inner.clone(),
            None => Registry::parse(DEMO_REGISTRY).map_err(value_err)?,
        };
        let interp = py.detach(|| interpreter::interpret(&self.inner, &reg, text)).map_err(value_err)?;
        to_py(py, &interp)
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={}, hidden={}, params={})", self.kind(), self.hidden(), self.param_count())
    }
}

/// Expands a corpus spec (JSON text) into `count` labeled sentences.
#[pyfunction]
#[pyo3(signature = (spec, count, seed=7))]
fn augment<'py>(py: Python<'py>, spec: &str, count: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let spec = grammar::parse_corpus_spec(spec).map_err(value_err)?;
    let corpus = py.detach(|| grammar::augment(&spec, seed, count)).map_err(value_err)?;
    corpus_to_py(py, &corpus)
}

#[pyfunction]
fn load_corpus<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let corpus = grammar::load_corpus(&path).map_err(value_err)?;
    corpus_to_py(py, &corpus)
}

/// Trains one architecture on a JSONL corpus. Returns `(model, report)`.
#[pyfunction]
#[pyo3(signature = (corpus, kind, hidden=None, epochs=50, batch_size=32, lr=3e-3, patience=5, seed=7, val_fraction=0.2))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    corpus: PathBuf,
    kind: &str,
    hidden: Option<usize>,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    patience: usize,
    seed: u64,
    val_fraction: f64,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let corpus = grammar::load_corpus(&corpus).map_err(value_err)?;
    let kind: ArchKind = kind.parse().map_err(value_err)?;
    let arch = ArchSpec::new(kind, hidden.unwrap_or(kind.default_hidden()));
    let cfg = TrainConfig { batch_size, max_epochs: epochs, lr, patience, seed, val_fraction, ..TrainConfig::default() };
    let (params, report) = py.detach(|| models::train(&arch, &corpus, &cfg)).map_err(value_err)?;
    let model = PyModel { inner: Model::new(arch, params).map_err(value_err)? };
    Ok((model, to_py(py, &report)?))
}

/// Metrics of `model` on a JSONL corpus.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: PyRef<'py, PyModel>, corpus: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let corpus = grammar::load_corpus(&corpus).map_err(value_err)?;
    let m = &model.inner;
    let metrics = py.detach(|| evalharness::evaluate(&m.params, &m.arch, &corpus)).map_err(value_err)?;
    to_py(py, &metrics)
}

/// Adds the classes, functions and constants to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyRegistry>()?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    let kinds: Vec<&str> = ArchKind::ALL.iter().map(|k| k.name()).collect();
    m.add("ARCH_KINDS", kinds)?;
    Ok(())
}

#[pymodule]
fn nlim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
