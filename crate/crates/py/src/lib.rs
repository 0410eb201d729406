//! Python bindings: problems, schedules, single runs and config-driven
//! experiments.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anchored_opt::diagnostics::TrajectoryLog;
use anchored_opt::harness::{self, Config};
use anchored_opt::noise::{NoiseModel, RngStream};
use anchored_opt::optimizers::{default_start, run as run_spec, CheckedSchedule, GateOptions, Method, RunSpec, Target};
use anchored_opt::problems::Problem as CoreProblem;
use anchored_opt::schedules::{validate, AlphaRule, ConstantStepSchedule, PowerLawSchedule, Schedule as CoreSchedule, ValidationMode};
use anchored_opt::{Error, Matrix, Vector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    anchored_opt::linalg::from_rows(&rows).ok_or_else(|| PyValueError::new_err("matrix rows must be nonempty and of equal length"))
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(frozen, module = "anchored_opt")]
struct Problem {
    inner: Arc<CoreProblem>,
}

#[pymethods]
impl Problem {
    #[staticmethod]
    #[pyo3(signature = (q, center = None))]
    fn quadratic(q: Vec<Vec<f64>>, center: Option<Vec<f64>>) -> PyResult<Self> {
        let q = matrix(q)?;
        let c = center.map(Vector::from_vec).unwrap_or_else(|| Vector::zeros(q.nrows()));
        Ok(Problem { inner: Arc::new(CoreProblem::quadratic(q, c).map_err(to_py)?) })
    }

    #[staticmethod]
    fn least_squares(a: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Self> {
        Ok(Problem { inner: Arc::new(CoreProblem::least_squares(matrix(a)?, Vector::from_vec(b)).map_err(to_py)?) })
    }

    #[staticmethod]
    fn logistic(a: Vec<Vec<f64>>, labels: Vec<f64>) -> PyResult<Self> {
        Ok(Problem { inner: Arc::new(CoreProblem::logistic(matrix(a)?, Vector::from_vec(labels)).map_err(to_py)?) })
    }

    #[staticmethod]
    fn rastrigin(dim: usize) -> PyResult<Self> {
        Ok(Problem { inner: Arc::new(CoreProblem::rastrigin(dim).map_err(to_py)?) })
    }

    #[staticmethod]
    fn rosenbrock(dim: usize) -> PyResult<Self> {
        Ok(Problem { inner: Arc::new(CoreProblem::rosenbrock(dim).map_err(to_py)?) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id()
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz_constant()
    }

    #[getter]
    fn f_star(&self) -> Option<f64> {
        self.inner.f_star()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.value(&Vector::from_vec(x)).map_err(to_py)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.gradient(&Vector::from_vec(x)).map_err(to_py)?.as_slice().to_vec())
    }

    /// Projection onto the solution set.
    fn project(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.project(&Vector::from_vec(u)).map_err(to_py)?.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Problem({})", self.inner.id())
    }
}

#[pyclass(frozen, module = "anchored_opt")]
struct Schedule {
    inner: CoreSchedule,
}

#[pymethods]
impl Schedule {
    /// `α_n = a(n+n0)^−p`, `ε_n = e(n+n0)^−q`.
    #[staticmethod]
    #[pyo3(signature = (a, p, e, q, n0 = 1))]
    fn power_law(a: f64, p: f64, e: f64, q: f64, n0: u64) -> PyResult<Self> {
        Ok(Schedule { inner: PowerLawSchedule::new(a, p, e, q, n0).map_err(to_py)?.into() })
    }

    /// Constant step with `α_n = 0` or `α_n = 1/(n+2)`.
    #[staticmethod]
    #[pyo3(signature = (eta, alpha = "classic"))]
    fn constant(eta: f64, alpha: &str) -> PyResult<Self> {
        let rule = match alpha {
            "zero" => AlphaRule::Zero,
            "classic" => AlphaRule::Classic,
            other => return Err(PyValueError::new_err(format!("alpha must be \"zero\" or \"classic\", got {other:?}"))),
        };
        Ok(Schedule { inner: ConstantStepSchedule::new(eta, rule).map_err(to_py)?.into() })
    }

    fn alpha(&self, n: u64) -> f64 {
        self.inner.alpha_at(n)
    }

    fn eps(&self, n: u64) -> f64 {
        self.inner.eps_at(n)
    }

    /// Condition report as a dict; power-law schedules only.
    #[pyo3(signature = (lipschitz, asymptotic = false))]
    fn validate<'py>(&self, py: Python<'py>, lipschitz: f64, asymptotic: bool) -> PyResult<Bound<'py, PyAny>> {
        let CoreSchedule::PowerLaw(s) = self.inner else {
            return Err(PyValueError::new_err("validate applies to power-law schedules"));
        };
        let mode = if asymptotic { ValidationMode::Asymptotic } else { ValidationMode::AllN };
        json_to_py(py, &validate(&s, lipschitz, mode))
    }

    fn __repr__(&self) -> String {
        self.inner.describe()
    }
}

fn noise_model(kind: &str, sigma: f64) -> PyResult<NoiseModel> {
    match kind {
        "zero" => Ok(NoiseModel::Zero),
        "gaussian_iso" => NoiseModel::gaussian(sigma).map_err(to_py),
        "bounded_uniform" => NoiseModel::bounded_uniform(sigma).map_err(to_py),
        "rademacher" => NoiseModel::rademacher(sigma).map_err(to_py),
        other => Err(PyValueError::new_err(format!("unknown noise kind {other:?}"))),
    }
}

fn log_to_dict<'py>(py: Python<'py>, log: &TrajectoryLog) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("records", json_to_py(py, &log.records)?)?;
    d.set_item("final", log.iterates.last().map(|x| x.as_slice().to_vec()))?;
    Ok(d)
}

/// Runs one trajectory and returns `{"records": [...], "final": [...]}`.
#[pyfunction]
#[pyo3(signature = (
    problem, method, schedule, anchor, horizon, x0 = None, noise = "zero", sigma = 1.0,
    seed = 0, stream = 0, override_schedule = false, dense = false
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    problem: &Problem,
    method: &str,
    schedule: &Schedule,
    anchor: Vec<f64>,
    horizon: u64,
    x0: Option<Vec<f64>>,
    noise: &str,
    sigma: f64,
    seed: u64,
    stream: u64,
    override_schedule: bool,
    dense: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let method: Method = method.parse().map_err(to_py)?;
    let checked = CheckedSchedule::check(
        method,
        schedule.inner,
        problem.inner.lipschitz_constant(),
        GateOptions { override_schedule, ..Default::default() },
    )
    .map_err(to_py)?;
    let noise = noise_model(noise, sigma)?;
    let anchor = Vector::from_vec(anchor);
    let x0 = x0.map(Vector::from_vec).unwrap_or_else(|| default_start(&anchor, 10.0, seed));
    let log = run_spec(&RunSpec {
        target: Target::Problem(&problem.inner),
        method,
        schedule: &checked,
        noise: &noise,
        anchor,
        x0,
        horizon,
        rng: RngStream::new(seed, stream),
        relaxation: 0.5,
        dense_log: dense,
    })
    .map_err(to_py)?;
    log_to_dict(py, &log)
}

/// Runs a TOML experiment config and returns the summary dict.
#[pyfunction]
#[pyo3(signature = (config_path, out = None, seeds = None, workers = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config_path: PathBuf,
    out: Option<PathBuf>,
    seeds: Option<usize>,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut config = Config::load(&config_path).map_err(to_py)?;
    harness::Overrides { seeds, out, ..Default::default() }.apply(&mut config);
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let res = py.detach(|| harness::run_experiment(&config, &base, workers)).map_err(to_py)?;
    json_to_py(py, &res.summary)
}

#[pymodule]
#[pyo3(name = "anchored_opt")]
fn anchored_opt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Schedule>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
