//! Python bindings: configuration, experiment runs, field generation and the
//! reference solver.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mpinn::fields::{self, GrfSpec};
use mpinn::harness::{self, HarnessError};
use mpinn::network::MlpArchitecture;
use mpinn::physics::{BoundarySpec, DomainSpec, Method, PhysicalParams, Variable};
use mpinn::refsolver::{self, FieldGrid};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn method(name: &str) -> PyResult<Method> {
    match name {
        "data_driven" => Ok(Method::DataDriven),
        "pinn_darcy" => Ok(Method::PinnDarcy),
        "mpinn" => Ok(Method::Mpinn),
        _ => Err(value_err(format!("unknown method {name:?}"))),
    }
}

fn variable(name: &str) -> PyResult<Variable> {
    match name {
        "K" => Ok(Variable::K),
        "h" => Ok(Variable::H),
        "C" => Ok(Variable::C),
        _ => Err(value_err(format!("unknown variable {name:?}; expected K, h or C"))),
    }
}

fn grid(values: Vec<f64>, nx: usize, ny: usize) -> PyResult<FieldGrid> {
    FieldGrid::new(nx, ny, DomainSpec::default(), values).map_err(value_err)
}

/// Experiment configuration, read from TOML.
#[pyclass(name = "ExperimentConfig", module = "mpinn_py", from_py_object)]
#[derive(Clone)]
struct PyConfig(harness::ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let c = harness::ExperimentConfig::from_toml(text).map_err(harness_err)?;
        c.validate().map_err(harness_err)?;
        Ok(Self(c))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::ExperimentConfig::load(path).map(Self).map_err(harness_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    #[getter]
    fn experiment(&self) -> String {
        self.0.experiment.clone()
    }

    #[getter]
    fn methods(&self) -> Vec<&'static str> {
        self.0.methods.iter().map(|m| m.name()).collect()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.0.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, seeds: Vec<u64>) -> PyResult<()> {
        if seeds.is_empty() {
            return Err(value_err("empty seed list"));
        }
        self.0.seeds = seeds;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(experiment={:?}, seeds={:?})",
            self.0.experiment, self.0.seeds
        )
    }
}

/// Per-seed results of one experiment.
#[pyclass(name = "ExperimentReport", module = "mpinn_py")]
struct PyReport(harness::ExperimentReport);

#[pymethods]
impl PyReport {
    /// Results table in the CSV layout written by the command-line tool.
    fn csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        harness::write_csv(&self.0, &mut buf).map_err(harness_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    fn json(&self) -> String {
        harness::report_json(&self.0).to_string()
    }

    /// Mean relative error of `var` ("K", "h" or "C") over successful seeds.
    fn mean_error(&self, method_name: &str, var: &str) -> PyResult<Option<f64>> {
        Ok(self.0.mean_error(method(method_name)?, variable(var)?))
    }

    #[getter]
    fn partial(&self) -> bool {
        self.0.partial()
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        harness::write_experiment_outputs(&self.0, &dir).map_err(harness_err)
    }
}

/// Train every configured method on every seed. The GIL is released while
/// training.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: PyConfig) -> PyResult<PyReport> {
    py.detach(|| harness::run_experiment(&config.0))
        .map(PyReport)
        .map_err(harness_err)
}

#[pyfunction]
fn analytic_k(x1: f64, x2: f64) -> f64 {
    fields::analytic_k([x1, x2])
}

/// Row-major `nx * ny` lognormal conductivity on the unit-by-half domain.
#[pyfunction]
#[pyo3(signature = (nx, ny, lam, seed, sigma2 = 1.0))]
fn lognormal_k(nx: usize, ny: usize, lam: f64, seed: u64, sigma2: f64) -> PyResult<Vec<f64>> {
    let spec = GrfSpec {
        sigma2,
        ..GrfSpec::new(lam, seed)
    };
    fields::lognormal_k(nx, ny, DomainSpec::default(), &spec)
        .map(|g| g.values)
        .map_err(value_err)
}

/// Head and concentration for row-major conductivity values under the
/// default boundary conditions. Returns `(h, C)`.
#[pyfunction]
#[pyo3(signature = (k, nx, ny, tol = 1e-10))]
fn solve_reference(py: Python<'_>, k: Vec<f64>, nx: usize, ny: usize, tol: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let k = grid(k, nx, ny)?;
    let r = py
        .detach(|| refsolver::solve_reference(k, &BoundarySpec::default(), &PhysicalParams::default(), tol))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((r.h.values, r.c.values))
}

/// Trainable parameter count of a two-input, one-output tanh network.
#[pyfunction]
fn param_count(hidden: Vec<usize>) -> PyResult<usize> {
    MlpArchitecture::new(hidden).map(|a| a.param_count()).map_err(value_err)
}

/// Squared relative L2 error of `estimate` against the row-major
/// `reference` grid.
#[pyfunction]
fn relative_error(reference: Vec<f64>, estimate: Vec<f64>, nx: usize, ny: usize) -> PyResult<f64> {
    harness::relative_error(&grid(reference, nx, ny)?, &estimate).map_err(harness_err)
}

#[pymodule]
fn mpinn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_k, m)?)?;
    m.add_function(wrap_pyfunction!(lognormal_k, m)?)?;
    m.add_function(wrap_pyfunction!(solve_reference, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    Ok(())
}
