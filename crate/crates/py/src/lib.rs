use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rdmatch::bounds::trimming_bounds_continuous;
use rdmatch::error::Error;
use rdmatch::pipeline::{self, load_market, run_pipeline, to_json, write_artifacts, RunConfig, Stage};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Validation(_) | Error::Row { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Either a TOML configuration string or a preset name; neither means the
/// default configuration.
fn make_config(config: Option<&str>, preset: Option<&str>, seed: Option<u64>, threads: Option<usize>) -> PyResult<RunConfig> {
    let mut c = match (config, preset) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("give either config or preset, not both")),
        (Some(text), None) => RunConfig::from_toml(text).map_err(py_err)?,
        (None, Some(name)) => RunConfig::preset(name).map_err(py_err)?,
        (None, None) => RunConfig::default(),
    };
    if seed.is_some() {
        c.seed = seed;
    }
    if let Some(t) = threads {
        c.threads = t;
    }
    c.validate().map_err(py_err)?;
    Ok(c)
}

#[pyfunction]
fn version() -> &'static str {
    pipeline::VERSION
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    rdmatch::presets::NAMES.to_vec()
}

/// Runs the market and returns `(assignment, cutoffs)`; 0 is the outside
/// option.
#[pyfunction]
#[pyo3(signature = (config=None, preset=None, seed=None))]
fn match_market(config: Option<&str>, preset: Option<&str>, seed: Option<u64>) -> PyResult<(Vec<u16>, Vec<f64>)> {
    let c = make_config(config, preset, seed, None)?;
    let m = load_market(&c).map_err(py_err)?;
    let assignment = m.matching.assignment().iter().map(|s| s.0).collect();
    Ok((assignment, m.cutoffs.values().to_vec()))
}

/// Full analysis. Returns a dict with `bounds`, `identify` and `manifest`
/// decoded from the same JSON the command line writes.
#[pyfunction]
#[pyo3(signature = (config=None, preset=None, seed=None, threads=None))]
fn run<'py>(
    py: Python<'py>,
    config: Option<&str>,
    preset: Option<&str>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let c = make_config(config, preset, seed, threads)?;
    let out = py.detach(|| run_pipeline(&c)).map_err(py_err)?;
    let text = format!(
        "{{\"bounds\": {}, \"identify\": {}, \"manifest\": {}}}",
        to_json(&out.bounds).map_err(py_err)?,
        to_json(&out.identify).map_err(py_err)?,
        to_json(&out.manifest).map_err(py_err)?
    );
    loads(py, &text)
}

/// Writes the artifacts into `out` and returns whether any pair was
/// falsified.
#[pyfunction]
#[pyo3(signature = (out, config=None, preset=None, seed=None, stage="bounds"))]
fn write_run(
    py: Python<'_>,
    out: PathBuf,
    config: Option<&str>,
    preset: Option<&str>,
    seed: Option<u64>,
    stage: &str,
) -> PyResult<bool> {
    let stage = match stage {
        "bounds" => Stage::Bounds,
        "identify" => Stage::Identify,
        s => return Err(PyValueError::new_err(format!("unknown stage `{s}`"))),
    };
    let c = make_config(config, preset, seed, None)?;
    py.detach(|| {
        let mut r = run_pipeline(&c)?;
        write_artifacts(&out, &mut r, stage)?;
        Ok(r.falsified())
    })
    .map_err(py_err)
}

/// Means of the lowest and highest `delta` share of weighted values.
#[pyfunction]
fn trimming_bounds(values: Vec<(f64, f64)>, delta: f64) -> PyResult<(f64, f64)> {
    trimming_bounds_continuous(&values, delta).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "rdmatch")]
fn rdmatch_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(match_market, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(write_run, m)?)?;
    m.add_function(wrap_pyfunction!(trimming_bounds, m)?)?;
    Ok(())
}
