//! Python bindings: parameters, model operators, gate extraction, Berry
//! loops and scenario runs.

use std::path::PathBuf;

use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qcavity_core::dynamics::StepControl;
use qcavity_core::gate::{self, GateReport};
use qcavity_core::geometric::{self, BerryReport, LoopSpec, DEFAULT_SURFACE_SAMPLES};
use qcavity_core::hilbert::CMatrix;
use qcavity_core::model::{ModelKind, ModelSystem};
use qcavity_core::scenario::{self, RunOptions};
use qcavity_core::Error;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        3 => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(m: &CMatrix) -> Vec<Vec<C64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: Vec<Vec<C64>>) -> PyResult<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn model_kind(name: &str) -> PyResult<ModelKind> {
    name.parse().map_err(py_err)
}

fn control(dt: Option<f64>) -> StepControl {
    StepControl {
        dt,
        ..StepControl::default()
    }
}

/// Physical parameters; `Delta` sets omega0 = omega3 = 0, omega_c = Delta.
#[pyclass(name = "SystemParams", from_py_object)]
#[derive(Clone)]
struct PySystemParams {
    inner: qcavity_core::SystemParams,
}

#[pymethods]
impl PySystemParams {
    #[new]
    #[pyo3(signature = (Delta=50.0, Omega=None, g=1.0, kappa=0.0, tau=0.0))]
    #[allow(non_snake_case)]
    fn new(Delta: f64, Omega: Option<f64>, g: f64, kappa: f64, tau: f64) -> PyResult<Self> {
        let mut p = qcavity_core::SystemParams::with_detuning(Delta, 0.0).damped(kappa, tau);
        p.g = g;
        p.omega = Omega.unwrap_or(0.1 * g * g / Delta);
        p.validate().map_err(py_err)?;
        Ok(Self { inner: p })
    }

    #[getter]
    fn omega0(&self) -> f64 {
        self.inner.omega0
    }

    #[getter]
    fn omega3(&self) -> f64 {
        self.inner.omega3
    }

    #[getter]
    fn omega_c(&self) -> f64 {
        self.inner.omega_c
    }

    #[getter]
    fn g(&self) -> f64 {
        self.inner.g
    }

    #[getter(Omega)]
    fn omega(&self) -> f64 {
        self.inner.omega
    }

    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    fn detuning(&self) -> f64 {
        self.inner.detuning()
    }

    fn coherent_coefficient(&self) -> f64 {
        self.inner.coherent_coefficient()
    }

    fn collective_decay_rate(&self) -> f64 {
        self.inner.collective_decay_rate()
    }

    fn dispersive_coupling(&self) -> f64 {
        self.inner.dispersive_coupling()
    }

    fn gate_time(&self) -> PyResult<f64> {
        self.inner.gate_time().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "SystemParams(Delta={}, Omega={}, g={}, kappa={}, tau={})",
            p.detuning(),
            p.omega,
            p.g,
            p.kappa,
            p.tau
        )
    }
}

#[pyclass(name = "GateReport", frozen)]
struct PyGateReport {
    inner: GateReport,
}

#[pymethods]
impl PyGateReport {
    #[getter]
    fn model(&self) -> &'static str {
        self.inner.model.name()
    }

    #[getter]
    fn fidelity(&self) -> f64 {
        self.inner.fidelity
    }

    #[getter]
    fn leakage(&self) -> [f64; 4] {
        self.inner.leakage
    }

    #[getter]
    fn phase_10(&self) -> f64 {
        self.inner.phase_10
    }

    #[getter]
    fn t_gate(&self) -> f64 {
        self.inner.t_gate
    }

    #[getter]
    fn extracted_gate(&self) -> Vec<Vec<C64>> {
        rows(&self.inner.extracted_gate)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "GateReport(model={}, fidelity={}, phase_10={})",
            self.inner.model, self.inner.fidelity, self.inner.phase_10
        )
    }
}

#[pyclass(name = "BerryReport", frozen)]
struct PyBerryReport {
    inner: BerryReport,
}

#[pymethods]
impl PyBerryReport {
    #[getter]
    fn numeric_phase(&self) -> f64 {
        self.inner.numeric_phase
    }

    #[getter]
    fn surface_integral(&self) -> f64 {
        self.inner.surface_integral
    }

    #[getter]
    fn half_surface_integral(&self) -> f64 {
        self.inner.half_surface_integral
    }

    #[getter]
    fn dynamical_phase_bound(&self) -> f64 {
        self.inner.dynamical_phase_bound
    }

    #[getter]
    fn adiabatic_leakage(&self) -> f64 {
        self.inner.adiabatic_leakage
    }

    #[getter]
    fn return_amplitude(&self) -> f64 {
        self.inner.return_amplitude
    }

    /// (label, amplitude, phase) for |00⟩, |01⟩, |11⟩.
    #[getter]
    fn decoupled(&self) -> Vec<(String, f64, f64)> {
        self.inner
            .decoupled
            .iter()
            .map(|d| (d.label.clone(), d.amplitude, d.phase))
            .collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }
}

/// Hamiltonian of a model as a list of rows of complex numbers.
#[pyfunction]
#[pyo3(signature = (model, params, fock_cutoff=2))]
fn hamiltonian(model: &str, params: &PySystemParams, fock_cutoff: usize) -> PyResult<Vec<Vec<C64>>> {
    let sys = ModelSystem::build(model_kind(model)?, &params.inner, fock_cutoff).map_err(py_err)?;
    Ok(rows(sys.hamiltonian.matrix()))
}

/// Jump operators of a model as (label, matrix rows) pairs.
#[pyfunction]
#[pyo3(signature = (model, params, fock_cutoff=2))]
fn jump_operators(model: &str, params: &PySystemParams, fock_cutoff: usize) -> PyResult<Vec<(String, Vec<Vec<C64>>)>> {
    let sys = ModelSystem::build(model_kind(model)?, &params.inner, fock_cutoff).map_err(py_err)?;
    Ok(sys
        .jumps
        .iter()
        .map(|j| (j.label.clone(), rows(j.operator.matrix())))
        .collect())
}

/// Hamiltonian in the text dump format.
#[pyfunction]
#[pyo3(signature = (model, params, fock_cutoff=2))]
fn dump(model: &str, params: &PySystemParams, fock_cutoff: usize) -> PyResult<String> {
    let sys = ModelSystem::build(model_kind(model)?, &params.inner, fock_cutoff).map_err(py_err)?;
    Ok(sys.hamiltonian.dump())
}

#[pyfunction]
fn ideal_phase_gate() -> Vec<Vec<C64>> {
    rows(&gate::ideal_phase_gate())
}

#[pyfunction]
fn gate_fidelity(extracted: Vec<Vec<C64>>, ideal: Vec<Vec<C64>>) -> PyResult<f64> {
    gate::gate_fidelity(&from_rows(extracted)?, &from_rows(ideal)?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (model, params, fock_cutoff=2, t_gate=None, dt=None))]
fn extract_gate(
    py: Python<'_>,
    model: &str,
    params: &PySystemParams,
    fock_cutoff: usize,
    t_gate: Option<f64>,
    dt: Option<f64>,
) -> PyResult<PyGateReport> {
    let kind = model_kind(model)?;
    let p = params.inner;
    let inner = py
        .detach(|| gate::extract_gate(kind, &p, fock_cutoff, t_gate, &control(dt)))
        .map_err(py_err)?;
    Ok(PyGateReport { inner })
}

#[pyfunction]
#[pyo3(signature = (theta0=None, windings=None, T=None, ramp_fraction=None, Omega_bar=None, dt=None))]
#[allow(non_snake_case)]
fn berry(
    py: Python<'_>,
    theta0: Option<f64>,
    windings: Option<f64>,
    T: Option<f64>,
    ramp_fraction: Option<f64>,
    Omega_bar: Option<f64>,
    dt: Option<f64>,
) -> PyResult<PyBerryReport> {
    let d = LoopSpec::default();
    let spec = LoopSpec {
        theta0: theta0.unwrap_or(d.theta0),
        windings: windings.unwrap_or(d.windings),
        total_time: T.unwrap_or(d.total_time),
        ramp_fraction: ramp_fraction.unwrap_or(d.ramp_fraction),
        omega_bar: Omega_bar.unwrap_or(d.omega_bar),
    };
    let inner = py
        .detach(|| geometric::adiabatic_run(&spec, &control(dt)))
        .map_err(py_err)?;
    Ok(PyBerryReport { inner })
}

/// Enclosed solid angle of a cap loop.
#[pyfunction]
#[pyo3(signature = (theta0, windings=1.0, ramp_fraction=0.25, samples=DEFAULT_SURFACE_SAMPLES))]
fn surface_integral(theta0: f64, windings: f64, ramp_fraction: f64, samples: usize) -> PyResult<f64> {
    let path = geometric::cap_loop(theta0, windings, 1.0, ramp_fraction).map_err(py_err)?;
    geometric::surface_integral(&path, samples).map_err(py_err)
}

/// Validate a scenario document and return its canonical JSON.
#[pyfunction]
fn parse_config(text: &str) -> PyResult<String> {
    scenario::parse_config(text)
        .and_then(|c| c.canonical_json())
        .map_err(py_err)
}

/// Run a scenario document, writing artifacts into `out_dir`. Returns the
/// run summary.
#[pyfunction]
#[pyo3(signature = (text, out_dir, workers=1))]
fn run_config(py: Python<'_>, text: &str, out_dir: PathBuf, workers: usize) -> PyResult<String> {
    let cfg = scenario::parse_config(text).map_err(py_err)?;
    let outcome = py
        .detach(|| scenario::run(&cfg, &RunOptions { out_dir, workers }))
        .map_err(py_err)?;
    Ok(outcome.summary)
}

#[pymodule]
fn qcavity(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", scenario::TOOL_VERSION)?;
    m.add_class::<PySystemParams>()?;
    m.add_class::<PyGateReport>()?;
    m.add_class::<PyBerryReport>()?;
    m.add_function(wrap_pyfunction!(hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(jump_operators, m)?)?;
    m.add_function(wrap_pyfunction!(dump, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_phase_gate, m)?)?;
    m.add_function(wrap_pyfunction!(gate_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(extract_gate, m)?)?;
    m.add_function(wrap_pyfunction!(berry, m)?)?;
    m.add_function(wrap_pyfunction!(surface_integral, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
