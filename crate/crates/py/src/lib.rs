//! Python module `tangram`: trace generation and validation, rendering,
//! the completeness loss, P@K and the extractor's parameter count. Traces
//! cross the boundary as trace-document JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tangram_core::geometry::{self, ValidateOptions, Variant};
use tangram_core::nn::{Backbone, Parameterized, INPUT_SIDE};
use tangram_core::trace::TraceDocument;
use tangram_core::{irl, pretrain};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_variant(variant: &str) -> PyResult<Variant> {
    match variant {
        "A" | "a" => Ok(Variant::A),
        "B" | "b" => Ok(Variant::B),
        other => Err(PyValueError::new_err(format!("variant must be 'A' or 'B', got {other:?}"))),
    }
}

/// A generated tangram trace as trace-document JSON.
#[pyfunction]
#[pyo3(signature = (seed, variant = "A", n_steps = 8))]
fn generate_trace(seed: u64, variant: &str, n_steps: usize) -> PyResult<String> {
    let trace = geometry::generate_trace(seed, parse_variant(variant)?, n_steps).map_err(value_error)?;
    Ok(TraceDocument::from_solve_trace(&trace).to_json())
}

/// Violations of a tangram trace document as `(step, kind, message)`
/// tuples; empty when the trace is valid.
#[pyfunction]
fn validate_trace(document: &str) -> PyResult<Vec<(Option<usize>, String, String)>> {
    let trace = TraceDocument::from_json(document).and_then(|d| d.to_solve_trace()).map_err(value_error)?;
    let report = geometry::validate_trace(&trace, &ValidateOptions::default());
    Ok(report.violations.into_iter().map(|v| (v.step, format!("{:?}", v.kind), v.message)).collect())
}

/// Frames of a tangram trace document rendered as 28x28 row strings.
#[pyfunction]
fn render_trace(document: &str) -> PyResult<Vec<Vec<String>>> {
    let trace = TraceDocument::from_json(document).and_then(|d| d.to_solve_trace()).map_err(value_error)?;
    let frames = trace.render(INPUT_SIDE).map_err(value_error)?;
    Ok(frames.iter().map(|f| f.to_rows()).collect())
}

#[pyfunction]
fn ccl(scores: Vec<f64>) -> PyResult<f64> {
    pretrain::ccl(&scores).map_err(value_error)
}

#[pyfunction]
fn precision_at_k(scores: Vec<f64>, k: usize) -> PyResult<f64> {
    irl::precision_at_k(&scores, k).map_err(value_error)
}

#[pyfunction]
fn parameter_count() -> usize {
    Backbone::new(0).named_params().iter().map(|(_, t)| t.numel()).sum()
}

#[pymodule]
fn tangram(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(validate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(render_trace, m)?)?;
    m.add_function(wrap_pyfunction!(ccl, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    Ok(())
}
