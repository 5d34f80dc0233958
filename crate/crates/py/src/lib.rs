//! Python bindings: instances, simulation, PF allocation and certificates.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use polysched::blass::{slaps_shares as shares, Blass, BlassConfig};
use polysched::certify::{certify_blass as blass_cert, certify_completion as completion_cert, smith_opt as smith};
use polysched::eg::{solve_eg, weights_for, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use polysched::engine::{metrics, simulate as run, Scheduler};
use polysched::experiment::{run_experiment as run_grid, ExperimentConfig};
use polysched::instances::{gen_family, gen_flowtime_concat, load_instance, Family, GenParams};
use polysched::polytope::build_polytope;
use polysched::schedulers::scheduler_by_name;
use polysched::tree::gen_lower_bound_tree;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serialize through JSON into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Instance", module = "polysched_py", frozen)]
pub struct PyInstance {
    inner: polysched::Instance,
}

#[pymethods]
impl PyInstance {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: load_instance(text).map_err(err)? })
    }

    /// Random instance of `family` with `n` jobs over `m` resources or machines.
    #[staticmethod]
    #[pyo3(signature = (family, n, m, seed=0))]
    fn generate(family: &str, n: usize, m: usize, seed: u64) -> PyResult<Self> {
        let family: Family = family.parse().map_err(err)?;
        Ok(Self { inner: gen_family(family, &GenParams::new(n, m), seed).map_err(err)? })
    }

    /// Depth-1 lower-bound tree as an unrelated-machines instance, optionally
    /// concatenated `copies` times with releases `gap` apart.
    #[staticmethod]
    #[pyo3(signature = (copies=1, gap=1.5, seed=0))]
    fn lower_bound(copies: usize, gap: f64, seed: u64) -> PyResult<Self> {
        let base = gen_lower_bound_tree(1, seed).and_then(|t| t.to_unrelated()).map_err(err)?;
        Ok(Self { inner: gen_flowtime_concat(&base, copies, gap).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.emit()
    }

    #[getter]
    fn family(&self) -> String {
        self.inner.family().to_string()
    }

    #[getter]
    fn capacities(&self) -> Vec<f64> {
        self.inner.capacities().to_vec()
    }

    fn jobs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.jobs())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Instance(family={}, jobs={})", self.inner.family(), self.inner.len())
    }
}

#[pyclass(name = "Trace", module = "polysched_py", frozen)]
pub struct PyTrace {
    inner: polysched::Trace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: polysched::Trace::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn scheduler(&self) -> String {
        self.inner.scheduler.clone()
    }

    #[getter]
    fn speed(&self) -> f64 {
        self.inner.speed
    }

    /// Completion time per job id.
    fn completions(&self) -> Vec<(u64, Option<f64>)> {
        self.inner.jobs.iter().map(|j| (j.id, j.completion)).collect()
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &metrics(&self.inner).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Trace(scheduler={}, speed={}, segments={})", self.inner.scheduler, self.inner.speed, self.inner.segments.len())
    }
}

/// Simulate `scheduler` (pf, maxmin, drf, blass) at `speed`.
#[pyfunction]
#[pyo3(signature = (instance, scheduler="pf", speed=1.0, epsilon=0.5))]
fn simulate(instance: &PyInstance, scheduler: &str, speed: f64, epsilon: f64) -> PyResult<PyTrace> {
    let cfg = BlassConfig::new(epsilon).map_err(err)?;
    let trace = if scheduler == "blass" {
        run(&instance.inner, &mut Blass::new(cfg) as &mut dyn Scheduler, speed)
    } else {
        let mut s = scheduler_by_name(scheduler, cfg).map_err(err)?;
        run(&instance.inner, s.as_mut(), speed)
    }
    .map_err(err)?;
    Ok(PyTrace { inner: trace })
}

/// Proportional-fair rates and row prices for the given alive jobs (all when omitted).
#[pyfunction]
#[pyo3(signature = (instance, alive=None, tol=DEFAULT_TOL))]
fn solve_pf<'py>(py: Python<'py>, instance: &PyInstance, alive: Option<Vec<u64>>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let ids = alive.unwrap_or_else(|| instance.inner.jobs().iter().map(|j| j.id).collect());
    let p = build_polytope(&instance.inner, &ids).map_err(err)?;
    let w = weights_for(&instance.inner, &p);
    let a = solve_eg(&p, &w, tol, DEFAULT_MAX_ITERS).map_err(err)?;
    to_py(py, &a)
}

/// Completion-time certificate report for a trace with PF duals.
#[pyfunction]
#[pyo3(signature = (instance, trace, s=32.0))]
fn certify_completion<'py>(py: Python<'py>, instance: &PyInstance, trace: &PyTrace, s: f64) -> PyResult<Bound<'py, PyAny>> {
    let (_, report) = completion_cert(&instance.inner, &trace.inner, s).map_err(err)?;
    to_py(py, &report)
}

/// Flow-time certificate report for a BLASS trace run at speed `1 + 3 epsilon`.
#[pyfunction]
#[pyo3(signature = (instance, trace, epsilon=0.5))]
fn certify_blass<'py>(py: Python<'py>, instance: &PyInstance, trace: &PyTrace, epsilon: f64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = BlassConfig::new(epsilon).map_err(err)?;
    let (_, report) = blass_cert(&instance.inner, &trace.inner, &cfg).map_err(err)?;
    to_py(py, &report)
}

/// Run an experiment described by a JSON config and return the report.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(err)?;
    let report = py.detach(|| run_grid(&cfg)).map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn slaps_shares(n: usize, k: u32, eta: f64) -> Vec<f64> {
    shares(n, k, eta)
}

#[pyfunction]
fn smith_opt(instance: &PyInstance) -> PyResult<f64> {
    smith(&instance.inner).map_err(err)
}

#[pymodule]
pub fn polysched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pf, m)?)?;
    m.add_function(wrap_pyfunction!(certify_completion, m)?)?;
    m.add_function(wrap_pyfunction!(certify_blass, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(slaps_shares, m)?)?;
    m.add_function(wrap_pyfunction!(smith_opt, m)?)?;
    Ok(())
}
