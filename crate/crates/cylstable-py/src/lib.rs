//! Python extension module `_cylstable`: the main types and operations of
//! the simulation library. Report-shaped results come back as JSON strings
//! so Python callers can `json.loads` them without a binding per field.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use cylstable::decoupling::{conditional_charfn_check, decoupling_ratio};
use cylstable::error::CylError;
use cylstable::hilbert::TruncationConfig;
use cylstable::integrator::{integrate, is_integrable, RefinementSchedule};
use cylstable::processes::{approximate_by_steps, integrand_from_catalog, ContractionStepProcess};
use cylstable::sampler::{
    sample_driving_path, sample_positive_stable as positive_stable_draw, sample_sas_1d,
    StabilityIndex,
};
use cylstable::spectral::{calibrate_constants, SphereMeasure};
use cylstable::verify::run_suite;
use cylstable::{HVector, RngStream, TimeGrid};

fn pyerr(e: CylError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn index(alpha: f64) -> PyResult<StabilityIndex> {
    StabilityIndex::new(alpha).map_err(pyerr)
}

/// A Hilbert-Schmidt operator between the truncated spaces, stored as a
/// `d_H x d_G` matrix of rows.
#[pyclass(name = "HsOperator", skip_from_py_object)]
#[derive(Clone)]
struct PyHsOperator {
    inner: cylstable::HSOperator,
}

#[pymethods]
impl PyHsOperator {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: cylstable::HSOperator::from_rows(&rows).map_err(pyerr)?,
        })
    }

    /// Shape `(d_h, d_g)`.
    fn dims(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn hs_norm(&self) -> f64 {
        self.inner.hs_norm()
    }

    fn adjoint(&self) -> PyHsOperator {
        PyHsOperator {
            inner: self.inner.adjoint(),
        }
    }

    /// Nonincreasing, nonnegative singular values.
    fn singular_values(&self) -> Vec<f64> {
        self.inner.singular_values().to_vec()
    }

    fn apply(&self, g: Vec<f64>) -> PyResult<Vec<f64>> {
        if g.len() != self.inner.dims().1 {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(self.inner.apply(&g).coords)
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        let m = self.inner.matrix();
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        let (h, g) = self.inner.dims();
        format!("HsOperator({h}x{g}, hs_norm={:.6})", self.inner.hs_norm())
    }
}

/// Calibrated spectral constants plus the sphere-mass table up to `max_dim`.
#[pyfunction]
#[pyo3(signature = (alpha, max_dim = 8))]
fn stable_constants<'py>(
    py: Python<'py>,
    alpha: f64,
    max_dim: usize,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let idx = index(alpha)?;
    let constants = calibrate_constants(idx).map_err(pyerr)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("alpha", constants.alpha)?;
    dict.set_item("c_alpha", constants.c_alpha)?;
    dict.set_item("tail_constant", constants.tail_constant)?;
    dict.set_item("ill_conditioned", constants.ill_conditioned)?;
    let masses: Vec<f64> = (1..=max_dim)
        .map(|n| SphereMeasure::new(n, idx).unwrap().mass)
        .collect();
    dict.set_item("sphere_masses", masses)?;
    Ok(dict)
}

/// `E_{unif sphere in R^n}[|x_1|^alpha]`.
#[pyfunction]
fn gamma_ratio_moment(n: usize, alpha: f64) -> PyResult<f64> {
    Ok(cylstable::spectral::gamma_ratio_moment(n, index(alpha)?))
}

/// Symmetric alpha-stable draws with `E cos(uX) = exp(-scale^alpha |u|^alpha)`.
#[pyfunction]
fn sample_sas(alpha: f64, scale: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let idx = index(alpha)?;
    if !(scale > 0.0) {
        return Err(PyValueError::new_err("scale must be positive"));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    Ok((0..n).map(|_| sample_sas_1d(idx, scale, &mut rng)).collect())
}

/// Positive (alpha/2)-stable draws with `E exp(-uA) = exp(-u^{alpha/2})`.
#[pyfunction]
fn sample_positive_stable(alpha: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let idx = index(alpha)?;
    let mut rng = RngStream::new(seed, 0).rng();
    Ok((0..n).map(|_| positive_stable_draw(idx, &mut rng)).collect())
}

/// Increments of one driving scenario: a `cells x d_g` list of lists, cell
/// `i` covering `((i-1) T/cells, i T/cells]`.
#[pyfunction]
fn sample_driving_increments(
    alpha: f64,
    d_g: usize,
    cells: usize,
    horizon: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let idx = index(alpha)?;
    let grid = TimeGrid::uniform(cells, horizon).map_err(pyerr)?;
    let config = TruncationConfig::new(d_g, d_g).map_err(pyerr)?;
    let mut rng = RngStream::new(seed, 0).rng();
    let path = sample_driving_path(idx, config, &grid, &mut rng);
    Ok((1..=cells).map(|i| path.increment(i).to_vec()).collect())
}

/// Monte Carlo tail mass of the pushforward spectral measure; returns
/// `(value, std_error)`.
#[pyfunction]
fn tail_mass(op: PyRef<'_, PyHsOperator>, alpha: f64, n_mc: usize, seed: u64) -> PyResult<(f64, f64)> {
    let idx = index(alpha)?;
    let mut rng = RngStream::new(seed, 0).rng();
    let est = cylstable::spectral::tail_mass(&op.inner, idx, n_mc, &mut rng).map_err(pyerr)?;
    Ok((est.value, est.std_error))
}

/// Monte Carlo modular `int (||h||^2 ^ 1) d(lambda . phi^{-1})`; returns
/// `(value, std_error)`.
#[pyfunction]
fn modular_integral(op: PyRef<'_, PyHsOperator>, alpha: f64, n_mc: usize, seed: u64) -> PyResult<(f64, f64)> {
    let idx = index(alpha)?;
    let mut rng = RngStream::new(seed, 0).rng();
    let est =
        cylstable::spectral::modular_integral(&op.inner, idx, n_mc, &mut rng).map_err(pyerr)?;
    Ok((est.value, est.std_error))
}

fn catalog(
    integrand: &str,
    params_json: &str,
) -> PyResult<Arc<dyn cylstable::processes::IntegrandProgram>> {
    let params: serde_json::Value = serde_json::from_str(params_json)
        .map_err(|e| PyValueError::new_err(format!("params is not valid JSON: {e}")))?;
    integrand_from_catalog(integrand, &params).map_err(pyerr)
}

/// Integrate a catalog integrand along simulated scenarios on a dyadic
/// refinement schedule; returns a JSON string with per-scenario level
/// diagnostics and terminal values.
#[pyfunction]
#[pyo3(signature = (integrand, params_json, alpha, cells = 256, levels = 6, scenarios = 8, seed = 0))]
fn integrate_catalog(
    integrand: &str,
    params_json: &str,
    alpha: f64,
    cells: usize,
    levels: u32,
    scenarios: usize,
    seed: u64,
) -> PyResult<String> {
    let idx = index(alpha)?;
    let psi = catalog(integrand, params_json)?;
    let (d_h, d_g) = psi.dims();
    let grid = TimeGrid::uniform(cells, 1.0).map_err(pyerr)?;
    if levels == 0 || cells % (1usize << levels) != 0 {
        return Err(PyValueError::new_err(
            "cells must be divisible by 2^levels",
        ));
    }
    let config = TruncationConfig::new(d_g, d_h).map_err(pyerr)?;
    let schedule = RefinementSchedule::dyadic(1, levels);
    let mut rows = Vec::new();
    for s in 0..scenarios {
        let mut rng = RngStream::new(seed, s as u64).rng();
        let path = sample_driving_path(idx, config, &grid, &mut rng);
        let (value, diag) = integrate(psi.clone(), &path, &schedule).map_err(pyerr)?;
        rows.push(serde_json::json!({
            "scenario": s,
            "terminal": value.coords,
            "converged": diag.converged,
            "levels": diag.levels,
        }));
    }
    Ok(serde_json::json!({"scenarios": rows}).to_string())
}

/// Integrability verdict of a catalog integrand; JSON string with the
/// verdict, the clipped-metric estimate and per-scenario norms.
#[pyfunction]
#[pyo3(signature = (integrand, params_json, alpha, cells = 256, scenarios = 16, seed = 0))]
fn integrability_report(
    integrand: &str,
    params_json: &str,
    alpha: f64,
    cells: usize,
    scenarios: usize,
    seed: u64,
) -> PyResult<String> {
    let idx = index(alpha)?;
    let psi = catalog(integrand, params_json)?;
    let grid = TimeGrid::uniform(cells, 1.0).map_err(pyerr)?;
    let report =
        is_integrable(psi.as_ref(), idx, &grid, scenarios, RngStream::new(seed, 0)).map_err(pyerr)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Decoupled tangent-sequence report (directional ratios plus the worst
/// conditional characteristic-function deviation) as a JSON string.
#[pyfunction]
#[pyo3(signature = (integrand, params_json, alpha, cells = 8, scenarios = 20_000, seed = 0))]
fn decoupling_report(
    integrand: &str,
    params_json: &str,
    alpha: f64,
    cells: usize,
    scenarios: usize,
    seed: u64,
) -> PyResult<String> {
    let idx = index(alpha)?;
    let psi = catalog(integrand, params_json)?;
    let d_h = psi.dims().0;
    let grid = TimeGrid::uniform(cells, 1.0).map_err(pyerr)?;
    let theta = approximate_by_steps(psi, grid.clone(), cells as f64);
    let stream = RngStream::new(seed, 0);
    let gamma = ContractionStepProcess::identity(grid, d_h);
    let ratios = decoupling_ratio(&theta, &gamma, idx, scenarios, stream.substream(1)).map_err(pyerr)?;
    let h = HVector::new((0..d_h).map(|k| if k == 0 { 1.0 } else { 0.5 }).collect());
    let dev = conditional_charfn_check(&theta, idx, &h, scenarios.min(100_000), 8, stream.substream(2))
        .map_err(pyerr)?;
    let report = serde_json::json!({
        "ratios": ratios,
        "conditional_charfn_worst_deviation": dev,
    });
    Ok(report.to_string())
}

/// Run a verification suite (same engine as `cylstable verify`); returns
/// the reports as a JSON string. Raises when any criterion fails.
#[pyfunction]
#[pyo3(signature = (suite = "all", seed = 42, fail_on_criterion = true))]
fn verify_suite(suite: &str, seed: u64, fail_on_criterion: bool) -> PyResult<String> {
    let reports = run_suite(suite, seed).map_err(pyerr)?;
    let all_pass = reports.iter().all(|r| r.pass);
    let text = serde_json::to_string(&reports).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if fail_on_criterion && !all_pass {
        return Err(PyValueError::new_err(format!(
            "verification criteria failed: {text}"
        )));
    }
    Ok(text)
}

#[pymodule]
fn _cylstable(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHsOperator>()?;
    m.add_function(wrap_pyfunction!(stable_constants, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_ratio_moment, m)?)?;
    m.add_function(wrap_pyfunction!(sample_sas, m)?)?;
    m.add_function(wrap_pyfunction!(sample_positive_stable, m)?)?;
    m.add_function(wrap_pyfunction!(sample_driving_increments, m)?)?;
    m.add_function(wrap_pyfunction!(tail_mass, m)?)?;
    m.add_function(wrap_pyfunction!(modular_integral, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(integrability_report, m)?)?;
    m.add_function(wrap_pyfunction!(decoupling_report, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
