//! Python bindings for the `flexpd` crate.

use std::path::Path;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use flexpd::experiments::{format_trace, run_experiment as run_config, ExperimentConfig};
use flexpd::objective::{load_libsvm, partition, synthetic_binary_dataset};
use flexpd::stepsize::{self, CertifyOptions, Coupling};
use flexpd::{build_topology, Error, ObjectiveSet, StepParams, StepsizeCertificate, StopRule, Topology, Variant};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::Divergence { .. } | Error::InvariantViolation(_) | Error::NonFiniteMatrix) => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

fn variant(name: &str) -> PyResult<Variant> {
    match name.trim_start_matches("FlexPD-") {
        "F" | "f" => Ok(Variant::F),
        "G" | "g" => Ok(Variant::G),
        "C" | "c" => Ok(Variant::C),
        _ => Err(PyValueError::new_err(format!("unknown variant '{name}', expected F, G or C"))),
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("expected a non-empty rectangular list of rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Communication graph with its incidence and penalty matrices.
#[pyclass(name = "Network", module = "flexpd_py")]
#[derive(Clone)]
struct PyNetwork {
    inner: flexpd::Network,
}

#[pymethods]
impl PyNetwork {
    /// `topology` is one of `path`, `ring`, `complete`, `k-regular:K`, `er:P`.
    #[new]
    #[pyo3(signature = (topology, n, seed = 0, penalty_scale = 1.0))]
    fn new(topology: &str, n: usize, seed: u64, penalty_scale: f64) -> PyResult<Self> {
        let tag = topology.parse::<Topology>().map_err(py_err)?.with_seed(seed);
        let graph = build_topology(&tag, n).map_err(py_err)?;
        Ok(PyNetwork { inner: flexpd::Network::new(graph, penalty_scale).map_err(py_err)? })
    }

    /// Same graph with `B = scale * A'A`.
    fn rescaled(&self, scale: f64) -> PyResult<Self> {
        Ok(PyNetwork { inner: self.inner.rescaled(scale).map_err(py_err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }
    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }
    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.graph().edges().to_vec()
    }
    #[getter]
    fn rho_b(&self) -> f64 {
        self.inner.rho_b()
    }
    #[getter]
    fn rho_ata(&self) -> f64 {
        self.inner.rho_ata()
    }
    /// Smallest nonzero eigenvalue of `AA'`.
    #[getter]
    fn s_aat(&self) -> f64 {
        self.inner.s_aat()
    }
    fn incidence(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.a())
    }
    fn penalty(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.b())
    }
    fn __repr__(&self) -> String {
        format!("Network({}, n={}, edges={}, rho_b={:.4e})", self.inner.graph().topology(), self.n(), self.edge_count(), self.rho_b())
    }
}

/// Per-agent objectives `f_i`.
#[pyclass(name = "Objective", module = "flexpd_py")]
#[derive(Clone)]
struct PyObjective {
    inner: ObjectiveSet,
}

#[pymethods]
impl PyObjective {
    /// `f_i(x) = c_i ||x - b_i||^2`; `b` has one row per agent.
    #[staticmethod]
    fn quadratic(c: Vec<f64>, b: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyObjective { inner: ObjectiveSet::quadratic(c, from_rows(&b)?).map_err(py_err)? })
    }

    /// Regularised logistic regression split over `n` agents. Reads a LIBSVM
    /// file when `path` is given, otherwise draws a synthetic dataset.
    #[staticmethod]
    #[pyo3(signature = (n, kappa = 0.01, path = None, seed = 0, samples = 768, features = 8))]
    fn logistic(n: usize, kappa: f64, path: Option<&str>, seed: u64, samples: usize, features: usize) -> PyResult<Self> {
        let ds = match path {
            Some(p) => load_libsvm(Path::new(p), Some(features)).map_err(py_err)?,
            None => synthetic_binary_dataset(samples, features, seed),
        };
        let parts = partition(&ds, n, seed).map_err(py_err)?;
        Ok(PyObjective { inner: ObjectiveSet::logistic(&ds, &parts, kappa).map_err(py_err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }
    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }
    /// Strong convexity constant `m`.
    #[getter]
    fn m(&self) -> f64 {
        self.inner.constants().0
    }
    /// Smoothness constant `L`.
    #[getter]
    fn l(&self) -> f64 {
        self.inner.constants().1
    }
    fn value(&self, x: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.eval_f(&from_rows(&x)?).map_err(py_err)
    }
    fn grad(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.grad(&from_rows(&x)?).map_err(py_err)?))
    }
}

/// Certified stepsize pair and the constants behind it.
#[pyclass(name = "Certificate", module = "flexpd_py")]
struct PyCertificate {
    inner: StepsizeCertificate,
}

#[pymethods]
impl PyCertificate {
    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn t(&self) -> usize {
        self.inner.t
    }
    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }
    #[getter]
    fn admissible(&self) -> bool {
        self.inner.admissible
    }
    /// The network the certificate applies to (its penalty may be rescaled).
    fn network(&self, net: &PyNetwork) -> PyResult<PyNetwork> {
        Ok(PyNetwork { inner: self.inner.network(&net.inner).map_err(py_err)? })
    }
    fn to_kv(&self) -> String {
        self.inner.to_kv()
    }
    fn __repr__(&self) -> String {
        format!("Certificate({}, T={}, alpha={:e}, beta={:e})", self.inner.variant, self.inner.t, self.inner.alpha, self.inner.beta)
    }
}

/// Stepsize certificate for FlexPD-`variant` with `t` primal steps.
#[pyfunction]
#[pyo3(signature = (variant, net, obj, t, coupling = "tied", beta_override = None))]
fn certify(
    variant: &str,
    net: &PyNetwork,
    obj: &PyObjective,
    t: usize,
    coupling: &str,
    beta_override: Option<f64>,
) -> PyResult<PyCertificate> {
    let coupling = match coupling {
        "tied" => Coupling::Tied,
        "fixed" => Coupling::Fixed,
        other => return Err(PyValueError::new_err(format!("coupling must be 'tied' or 'fixed', got '{other}'"))),
    };
    let opts = CertifyOptions { coupling, beta_override, ..CertifyOptions::default() };
    let inner = stepsize::certify(self::variant(variant)?, &net.inner, &obj.inner, t, &opts).map_err(py_err)?;
    Ok(PyCertificate { inner })
}

/// Closed-form FlexPD-C alpha bound.
#[pyfunction]
fn c_alpha_bound(l: f64, eta: f64, rho_b: f64, t: usize) -> f64 {
    stepsize::c_alpha_bound(l, eta, rho_b, t)
}

/// Centralised optimum, replicated on every agent.
#[pyfunction]
fn reference_solution(net: &PyNetwork, obj: &PyObjective) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&flexpd::reference_solution(&net.inner, &obj.inner).map_err(py_err)?.x_star))
}

/// Runs FlexPD from `x = 0` until the relative error drops below `epsilon`.
/// Returns a dict with the trace columns, `converged_at` and the final `x`.
#[pyfunction]
#[pyo3(signature = (variant, net, obj, alpha, beta, t, epsilon = 1e-4, max_iters = 100_000, record_every = 1))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    variant: &str,
    net: &PyNetwork,
    obj: &PyObjective,
    alpha: f64,
    beta: f64,
    t: usize,
    epsilon: f64,
    max_iters: usize,
    record_every: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let v = self::variant(variant)?;
    let params = StepParams::new(alpha, beta, t).map_err(py_err)?;
    let stop = StopRule { record_every: record_every.max(1), ..StopRule::relative(epsilon, max_iters) };
    let (net, obj) = (&net.inner, &obj.inner);
    let trace = py
        .allow_threads(|| {
            let reference = flexpd::reference_solution(net, obj)?;
            flexpd::solve(v, net, obj, params, DMatrix::zeros(net.n(), obj.p()), &stop, Some(&reference))
        })
        .map_err(py_err)?;
    let out = PyDict::new_bound(py);
    out.set_item("converged_at", trace.converged_at)?;
    out.set_item("k", trace.rows.iter().map(|r| r.k).collect::<Vec<_>>())?;
    out.set_item("rel_error", trace.rows.iter().map(|r| r.rel_error).collect::<Vec<_>>())?;
    out.set_item("grad_evals", trace.rows.iter().map(|r| r.grad_evals).collect::<Vec<_>>())?;
    out.set_item("comm_rounds", trace.rows.iter().map(|r| r.comm_rounds).collect::<Vec<_>>())?;
    out.set_item("x", to_rows(&trace.final_state.x))?;
    Ok(out)
}

/// Runs a JSON experiment config. Returns one dict per `(method, seed)` with
/// either the CSV trace or the error message.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let records = py.allow_threads(|| run_config(&cfg)).map_err(py_err)?;
    records
        .iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("method", &r.method)?;
            d.set_item("t", r.t)?;
            d.set_item("seed", r.seed)?;
            d.set_item("iterations", r.iterations())?;
            match &r.outcome {
                Ok(tr) => d.set_item("csv", format_trace(tr))?,
                Err(e) => d.set_item("error", e.to_string())?,
            }
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn flexpd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PyCertificate>()?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(c_alpha_bound, m)?)?;
    m.add_function(wrap_pyfunction!(reference_solution, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
