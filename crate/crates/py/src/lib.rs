//! Python bindings for the detector and its building blocks.

use std::collections::HashMap;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use wsod_core::boxgeom::BBox;
use wsod_core::gradcore::Matrix;
use wsod_core::harness::{evaluate, format_detections, gen_dataset, train, RunConfig};
use wsod_core::inference::SccParams;
use wsod_core::Error;

type Corners = (f64, f64, f64, f64);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NonFinite { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn bbox(c: Corners) -> PyResult<BBox> {
    BBox::new(c.0, c.1, c.2, c.3).map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Matrix::from_vec(n, cols, rows.into_iter().flatten().collect()).map_err(to_py)
}

fn config(overrides: Option<HashMap<String, String>>, seed: Option<u64>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut keys: Vec<_> = overrides.unwrap_or_default().into_iter().collect();
    keys.sort();
    for (k, v) in keys {
        cfg.set(&k, &v).map_err(to_py)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Default configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml()
}

#[pyfunction]
#[pyo3(signature = (overrides=None, seed=None))]
fn config_digest(
    overrides: Option<HashMap<String, String>>,
    seed: Option<u64>,
) -> PyResult<String> {
    Ok(config(overrides, seed)?.digest())
}

#[pyfunction]
fn iou(a: Corners, b: Corners) -> PyResult<f64> {
    Ok(wsod_core::boxgeom::iou(&bbox(a)?, &bbox(b)?))
}

/// Indices of the kept boxes, best first.
#[pyfunction]
fn nms(boxes: Vec<Corners>, scores: Vec<f64>, iou_threshold: f64) -> PyResult<Vec<usize>> {
    let boxes = boxes.into_iter().map(bbox).collect::<PyResult<Vec<_>>>()?;
    wsod_core::boxgeom::nms(&boxes, &scores, iou_threshold).map_err(to_py)
}

/// Correct pipeline scores (proposals x classes+1) with MIDN scores
/// (proposals x classes).
#[pyfunction]
#[pyo3(signature = (scores, midn, lam=0.01, tau_midn=0.001))]
fn scc(
    scores: Vec<Vec<f64>>,
    midn: Vec<Vec<f64>>,
    lam: f64,
    tau_midn: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let params = SccParams {
        lambda: lam,
        tau_midn,
        ..SccParams::default()
    };
    let out =
        wsod_core::inference::scc(&matrix(scores)?, &matrix(midn)?, &params).map_err(to_py)?;
    Ok((0..out.rows()).map(|i| out.row(i).to_vec()).collect())
}

/// Generate data, train and evaluate. Returns `(metrics_json, detections,
/// checkpoint_bytes)`.
#[pyfunction]
#[pyo3(signature = (overrides=None, seed=None))]
fn run<'py>(
    py: Python<'py>,
    overrides: Option<HashMap<String, String>>,
    seed: Option<u64>,
) -> PyResult<(String, String, Bound<'py, PyBytes>)> {
    let cfg = config(overrides, seed)?;
    let (metrics, dets, ckpt) = py
        .detach(|| -> wsod_core::Result<_> {
            let data = gen_dataset(&cfg, cfg.seed);
            let outcome = train(&cfg, &data.train)?;
            let ev = evaluate(&outcome.model, &cfg, &data)?;
            Ok((
                ev.metrics.to_json(),
                format_detections(&ev.detections),
                outcome.model.checkpoint_bytes(),
            ))
        })
        .map_err(to_py)?;
    Ok((metrics, dets, PyBytes::new(py, &ckpt)))
}

/// `(name, cases, failures, max_error)` for every verification suite.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn check(py: Python<'_>, seed: u64) -> Vec<(String, usize, usize, f64)> {
    py.detach(|| wsod_core::check::run_all(seed))
        .into_iter()
        .map(|r| (r.name, r.cases, r.failures, r.max_error))
        .collect()
}

#[pymodule]
fn wsod(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_digest, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(scc, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
