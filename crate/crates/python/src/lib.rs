//! Python bindings for `stochom`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stochom::config::{parse_config, RunConfig};
use stochom::fem::{relative_error, SolutionField};
use stochom::homogenize::{covariance_two_phase as cov, CellSolver, Region};
use stochom::linalg::CgOptions;
use stochom::microstructure::{
    derive_stream, sample_truncated_normal as draw_tn, take_and_place as place, CellGeometry,
    StreamPurpose,
};
use stochom::pipeline::{algorithm1_two_stage, algorithm2_reference, first_block_tensors, Problem};
use stochom::{Error, ErrorCategory, Mat2};

fn to_py(e: Error) -> PyErr {
    let msg = format!("[{}] {e}", e.category().as_str());
    match e.category() {
        ErrorCategory::Config => PyValueError::new_err(msg),
        ErrorCategory::Io => PyIOError::new_err(msg),
        ErrorCategory::Solver | ErrorCategory::Placement => PyRuntimeError::new_err(msg),
    }
}

fn rows(m: Mat2) -> [[f64; 2]; 2] {
    m.0
}

/// Validated run configuration.
#[pyclass(name = "Config", module = "pystochom", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// `Config(path=None, overrides=None)`; overrides map keys to values,
    /// e.g. `{"L": 10, "test_case": "A_I"}`.
    #[new]
    #[pyo3(signature = (path=None, overrides=None))]
    fn new(path: Option<PathBuf>, overrides: Option<BTreeMap<String, Bound<'_, PyAny>>>) -> PyResult<Self> {
        let mut ov = Vec::new();
        for (k, v) in overrides.unwrap_or_default() {
            ov.push(format!("{k}={}", v.str()?.to_str()?));
        }
        let inner = parse_config(path.as_deref(), &ov).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn test_case(&self) -> &'static str {
        self.inner.test_case.name()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn samples(&self) -> usize {
        self.inner.samples
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn coefficient_reading(&self) -> &'static str {
        self.inner.coefficient_reading()
    }

    fn to_ini(&self) -> String {
        self.inner.to_ini()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(test_case={}, epsilon={}, L={}, seed={})",
            self.inner.test_case.name(),
            self.inner.epsilon,
            self.inner.samples,
            self.inner.seed
        )
    }
}

/// Nodal P1 field on a structured triangular mesh.
#[pyclass(name = "Field", module = "pystochom", from_py_object)]
#[derive(Clone)]
struct PyField {
    inner: SolutionField,
}

#[pymethods]
impl PyField {
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[getter]
    fn nodes(&self) -> Vec<(f64, f64)> {
        self.inner.mesh.nodes().iter().map(|p| (p[0], p[1])).collect()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.mesh.n_nodes()
    }

    fn evaluate(&self, x: f64, y: f64) -> PyResult<f64> {
        self.inner.evaluate([x, y]).map_err(to_py)
    }

    fn max_value(&self) -> f64 {
        self.inner.max_value()
    }

    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    fn h1_seminorm(&self) -> f64 {
        self.inner.h1_seminorm()
    }

    /// Relative L2 error against `reference`, on either mesh.
    fn relative_error(&self, reference: &PyField) -> PyResult<f64> {
        relative_error(&self.inner, &reference.inner).map_err(to_py)
    }

    fn write_vtk(&self, path: PathBuf, name: &str) -> PyResult<()> {
        let f = std::fs::File::create(path)?;
        stochom::io::write_vtk(&self.inner, name, std::io::BufWriter::new(f)).map_err(to_py)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(path)?;
        stochom::io::write_field_csv(&self.inner, std::io::BufWriter::new(f)).map_err(to_py)
    }
}

fn problem(config: &PyConfig) -> PyResult<Problem> {
    Problem::new(config.inner.clone()).map_err(to_py)
}

/// Equivalent tensor of block (0, 0) for one sample.
#[pyfunction]
#[pyo3(signature = (config, sample=0))]
fn cell_tensor(py: Python<'_>, config: &PyConfig, sample: u64) -> PyResult<[[f64; 2]; 2]> {
    let p = problem(config)?;
    py.detach(|| {
        let solver = p.cell_solver(p.config.m)?;
        first_block_tensors(&p, &solver, &[sample]).map(|t| rows(t[0].tensor))
    })
    .map_err(to_py)
}

/// Equivalent tensor of a constant isotropic coefficient `c` (returns `c I`).
#[pyfunction]
#[pyo3(signature = (c, n=16))]
fn constant_cell_tensor(c: f64, n: usize) -> PyResult<[[f64; 2]; 2]> {
    let solver = CellSolver::new(1, n, 2, CgOptions::default()).map_err(to_py)?;
    solver
        .solve(|_| Ok(Mat2::scalar(c)))
        .map(|r| rows(r.tensor))
        .map_err(to_py)
}

/// Equivalent tensor of an equal-volume laminate with layers normal to x1.
#[pyfunction]
#[pyo3(signature = (a, b, n=64))]
fn laminate_tensor(a: f64, b: f64, n: usize) -> PyResult<[[f64; 2]; 2]> {
    let solver = CellSolver::new(1, n, 2, CgOptions::default()).map_err(to_py)?;
    solver
        .solve(|y| Ok(Mat2::scalar(if y[0] < 0.5 { a } else { b })))
        .map(|r| rows(r.tensor))
        .map_err(to_py)
}

/// Stage one plus the homogenized solve.
#[pyfunction]
fn two_stage(py: Python<'_>, config: &PyConfig) -> PyResult<Py<pyo3::types::PyDict>> {
    let p = problem(config)?;
    let out = py.detach(|| algorithm1_two_stage(&p)).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("mean", rows(out.stats.mean))?;
    d.set_item("variance", rows(out.stats.variance))?;
    d.set_item("samples", out.stats.sample_count)?;
    d.set_item("delta", out.decomposition.delta)?;
    d.set_item("lambda1", out.decomposition.lambda1)?;
    d.set_item("degenerate", out.decomposition.degenerate)?;
    d.set_item("u0", PyField { inner: out.u0 })?;
    Ok(d.unbind())
}

/// Monte Carlo reference mean solution.
#[pyfunction]
fn reference(py: Python<'_>, config: &PyConfig) -> PyResult<PyField> {
    let p = problem(config)?;
    py.detach(|| algorithm2_reference(&p, false))
        .map(|r| PyField { inner: r.mean })
        .map_err(to_py)
}

/// Covariance of the two-phase law for regions "D1" / "D2".
#[pyfunction]
fn covariance_two_phase(a1: f64, a2: f64, s: &str, t: &str) -> PyResult<f64> {
    let region = |r: &str| match r {
        "D1" => Ok(Region::D1),
        "D2" => Ok(Region::D2),
        other => Err(PyValueError::new_err(format!("unknown region {other}"))),
    };
    Ok(cov(a1, a2, region(s)?, region(t)?))
}

/// `count` standard-normal draws conditioned on `[-b, b]`.
#[pyfunction]
#[pyo3(signature = (seed, count, b=1.5))]
fn sample_truncated_normal(seed: u64, count: usize, b: f64) -> Vec<f64> {
    let mut rng = derive_stream(seed, 0, (0, 0), StreamPurpose::Study);
    (0..count).map(|_| draw_tn(&mut rng, b)).collect()
}

/// Non-overlapping ellipses in the unit cell as `(cx, cy, semi_major, semi_minor, angle)`.
#[pyfunction]
fn take_and_place(seed: u64, count: usize, axis_min: f64, axis_max: f64) -> PyResult<Vec<(f64, f64, f64, f64, f64)>> {
    let mut rng = derive_stream(seed, 0, (0, 0), StreamPurpose::Geometry);
    match place(count, (axis_min, axis_max), &mut rng).map_err(to_py)? {
        CellGeometry::EllipseSet { ellipses } => Ok(ellipses
            .iter()
            .map(|e| (e.center[0], e.center[1], e.semi_major, e.semi_minor, e.angle))
            .collect()),
        CellGeometry::SquareInclusion { .. } => unreachable!("take_and_place returns ellipses"),
    }
}

#[pymodule]
fn pystochom(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(cell_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(constant_cell_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(laminate_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(two_stage, m)?)?;
    m.add_function(wrap_pyfunction!(reference, m)?)?;
    m.add_function(wrap_pyfunction!(covariance_two_phase, m)?)?;
    m.add_function(wrap_pyfunction!(sample_truncated_normal, m)?)?;
    m.add_function(wrap_pyfunction!(take_and_place, m)?)?;
    Ok(())
}
