//! Python bindings. Structured results come back as plain dicts and lists.

use bohmlab::experiments::{self, EquivarianceScenario, SternGerlachConfig, SystemState};
use bohmlab::formalism::{born_distribution, ideal_measurement};
use bohmlab::hilbert::{pauli, HermitianOperator, Operator, StateVector};
use bohmlab::nogo;
use bohmlab::wavefield::SgParams;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: bohmlab::Error) -> PyErr {
    match e {
        bohmlab::Error::Dimension(_) | bohmlab::Error::Validation(_) | bohmlab::Error::SizeCap { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Round-trips through JSON so Python receives dicts, lists and floats.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: serde::de::DeserializeOwned + Default>(config: Option<&str>) -> PyResult<T> {
    match config {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

/// Born distribution of the ideal measurement of `observable` in `state`,
/// as `[(eigenvalue, probability), ...]` in ascending eigenvalue order.
#[pyfunction]
fn born(observable: Vec<Vec<Complex64>>, state: Vec<Complex64>) -> PyResult<Vec<(f64, f64)>> {
    let a = HermitianOperator::new(Operator::from_rows(&observable).map_err(err)?).map_err(err)?;
    let psi = StateVector::new(state).map_err(err)?;
    let m = ideal_measurement(&a).map_err(err)?;
    let mut d: Vec<(f64, f64)> =
        born_distribution(&m, &psi).map_err(err)?.into_iter().map(|(l, p)| (l.first(), p)).collect();
    d.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(d)
}

/// The three singlet anticorrelation probabilities for settings `a, b, c`.
#[pyfunction]
fn bell_terms(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> PyResult<[f64; 3]> {
    nogo::bell_terms(a, b, c).map_err(err)
}

/// LP feasibility certificate for local value maps on coplanar settings
/// `angle_deg` apart.
#[pyfunction]
#[pyo3(signature = (angle_deg=120.0))]
fn bell_certificate(py: Python<'_>, angle_deg: f64) -> PyResult<Bound<'_, PyAny>> {
    let th = angle_deg.to_radians();
    let dirs = [pauli::xz_direction(0.0), pauli::xz_direction(th), pauli::xz_direction(2.0 * th)];
    let model = nogo::bell_model(dirs).map_err(err)?;
    let cert = nogo::value_map_feasibility(&model).map_err(err)?;
    cert.verify(&model).map_err(err)?;
    to_py(py, &cert)
}

#[pyfunction]
#[pyo3(signature = (grid=64, budget=1_000_000))]
fn hardy_search(py: Python<'_>, grid: usize, budget: usize) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &nogo::hardy_search(grid, budget).map_err(err)?)
}

/// Stern-Gerlach run on `√w ψ⁺ + √(1−w) ψ⁻`; `config` is the JSON form of
/// the magnet parameters.
#[pyfunction]
#[pyo3(signature = (alpha2=0.7, n=1000, seed=0, config=None))]
fn stern_gerlach<'py>(
    py: Python<'py>,
    alpha2: f64,
    n: usize,
    seed: u64,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: SternGerlachConfig = from_json(config)?;
    let spec = experiments::stern_gerlach(&cfg).map_err(err)?;
    let psi = experiments::spin_state(alpha2).map_err(err)?;
    let rec = py
        .detach(|| experiments::run(&spec, &SystemState::Spinor(psi), n, seed))
        .map_err(err)?;
    to_py(py, &rec)
}

/// `O_T` of the Stern-Gerlach experiment as `T` doubles from `t0`.
#[pyfunction]
#[pyo3(signature = (t0=0.5, tol=1e-3, max_doublings=5))]
fn sg_povm_limit(py: Python<'_>, t0: f64, tol: f64, max_doublings: usize) -> PyResult<Bound<'_, PyAny>> {
    let pts = py
        .detach(|| experiments::sg_povm_limit(SgParams::default(), t0, tol, max_doublings))
        .map_err(err)?;
    to_py(py, &pts)
}

/// Equivariance scenario `trap`, `free` or `control`.
#[pyfunction]
#[pyo3(signature = (scenario="trap", n=20_000, seed=0))]
fn equivariance<'py>(py: Python<'py>, scenario: &str, n: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let s: EquivarianceScenario = serde_json::from_value(serde_json::Value::String(scenario.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown scenario {scenario:?}")))?;
    let r = py.detach(|| experiments::equivariance_scenario(s, n, seed)).map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn bohmlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(born, m)?)?;
    m.add_function(wrap_pyfunction!(bell_terms, m)?)?;
    m.add_function(wrap_pyfunction!(bell_certificate, m)?)?;
    m.add_function(wrap_pyfunction!(hardy_search, m)?)?;
    m.add_function(wrap_pyfunction!(stern_gerlach, m)?)?;
    m.add_function(wrap_pyfunction!(sg_povm_limit, m)?)?;
    m.add_function(wrap_pyfunction!(equivariance, m)?)?;
    Ok(())
}
