//! Python module `msmstate`: load data, bind a mapping, run analyses.
//!
//! Results cross the boundary as JSON, decoded with the `json` module, so
//! Python sees the same objects the HTTP service returns.

use msm_core::analysis::{self, AnalysisKind, Mapping};
use msm_core::data;
use msm_core::simulate::{simulate_idm as simulate, IdmScenario};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde_json::Value;

create_exception!(msmstate, MsmError, PyException);
create_exception!(msmstate, ValidationError, MsmError);
create_exception!(msmstate, ComputationError, MsmError);

fn to_py(e: msm_core::Error) -> PyErr {
    let text = format!("{}: {e}", e.code());
    if e.is_validation() {
        ValidationError::new_err(text)
    } else {
        ComputationError::new_err(text)
    }
}

fn to_python<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

/// Accepts a JSON string or any object `json.dumps` can serialize.
fn from_python(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = if let Ok(s) = obj.cast::<PyString>() {
        s.to_string()
    } else {
        obj.py()
            .import("json")?
            .call_method1("dumps", (obj,))?
            .extract()?
    };
    serde_json::from_str(&text).map_err(|e| ValidationError::new_err(format!("InvalidJson: {e}")))
}

/// A parsed table.
#[pyclass(frozen, module = "msmstate")]
struct Dataset {
    inner: data::Dataset,
}

#[pymethods]
impl Dataset {
    /// Parses CSV text; `delimiter` is `","`, `";"` or detected when omitted.
    #[staticmethod]
    #[pyo3(signature = (text, delimiter=None))]
    fn parse_csv(text: &str, delimiter: Option<char>) -> PyResult<Dataset> {
        let hint = match delimiter {
            None => None,
            Some(c @ (',' | ';')) => Some(c as u8),
            Some(c) => {
                return Err(ValidationError::new_err(format!(
                    "unsupported delimiter `{c}`"
                )))
            }
        };
        let inner = data::parse_csv(text.as_bytes(), hint).map_err(to_py)?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, delimiter=None))]
    fn read_csv(path: std::path::PathBuf, delimiter: Option<char>) -> PyResult<Dataset> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            pyo3::exceptions::PyOSError::new_err(format!("{}: {e}", path.display()))
        })?;
        Dataset::parse_csv(&text, delimiter)
    }

    /// Column descriptors as dicts.
    #[getter]
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(
            py,
            &serde_json::to_value(self.inner.columns()).expect("serializable"),
        )
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[pyo3(signature = (n=20))]
    fn preview(&self, n: usize) -> Vec<Vec<String>> {
        self.inner.preview(n)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv(b',')
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_rows={}, columns={})",
            self.inner.n_rows(),
            self.inner.columns().len()
        )
    }
}

/// Data validated against a mapping, ready for analyses.
#[pyclass(frozen, module = "msmstate")]
struct BoundData {
    inner: analysis::Bound,
    report: Value,
}

#[pymethods]
impl BoundData {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    /// Rows used and dropped, plus warnings.
    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.report)
    }

    /// Runs one analysis; see `analyses()` for names.
    #[pyo3(signature = (analysis, params=None, seed=None))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        analysis: &str,
        params: Option<&Bound<'py, PyAny>>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let kind: AnalysisKind = analysis.parse().map_err(to_py)?;
        let params = match params {
            None => Value::Object(Default::default()),
            Some(p) => from_python(p)?,
        };
        let fallback = seed.unwrap_or_else(|| u64::from(rand::random::<u32>()));
        let out = py
            .detach(|| analysis::run(kind, &self.inner, &params, fallback))
            .map_err(to_py)?;
        to_python(py, &out)
    }

    fn __repr__(&self) -> String {
        format!("BoundData(kind={})", self.kind())
    }
}

/// Validates `dataset` against a mapping given as a dict or JSON string.
#[pyfunction]
fn bind(dataset: &Dataset, mapping: &Bound<'_, PyAny>) -> PyResult<BoundData> {
    let mapping = Mapping::from_json(from_python(mapping)?).map_err(to_py)?;
    let (inner, report) = analysis::bind(&dataset.inner, &mapping).map_err(to_py)?;
    let report = serde_json::to_value(&report).expect("serializable");
    Ok(BoundData { inner, report })
}

/// Names of the available analyses.
#[pyfunction]
fn analyses() -> Vec<&'static str> {
    AnalysisKind::ALL.iter().map(|k| k.name()).collect()
}

/// Simulated illness-death data with columns time1, event1, Stime, event.
#[pyfunction]
#[pyo3(signature = (n, seed, semi_markov=false))]
fn simulate_idm(n: usize, seed: u64, semi_markov: bool) -> PyResult<Dataset> {
    let scenario = if semi_markov {
        IdmScenario::semi_markov()
    } else {
        IdmScenario::markov()
    };
    let d = simulate(&scenario, n, seed).map_err(to_py)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    let rows = (0..d.len())
        .map(|i| {
            vec![
                d.time1[i].to_string(),
                flag(d.event1[i]),
                d.stime[i].to_string(),
                flag(d.event[i]),
            ]
        })
        .collect();
    let names = ["time1", "event1", "Stime", "event"]
        .map(String::from)
        .to_vec();
    Ok(Dataset {
        inner: data::Dataset::from_strings(names, rows),
    })
}

#[pymodule]
fn msmstate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<BoundData>()?;
    m.add_function(wrap_pyfunction!(bind, m)?)?;
    m.add_function(wrap_pyfunction!(analyses, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_idm, m)?)?;
    m.add("MsmError", m.py().get_type::<MsmError>())?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    m.add("ComputationError", m.py().get_type::<ComputationError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
