use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rie_core::dataset::{self, InterventionConfig, InterventionKind, Schema};
use rie_core::error::ErrorKind;
use rie_core::estimators::{self, Method};
use rie_core::learners::LearnerSpec;
use rie_core::simulation::{self, SimConfig};
use rie_core::{diagnostics, superlearner};

fn to_py(e: rie_core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn kind_from(s: &str) -> PyResult<InterventionKind> {
    match s {
        "set_binary" => Ok(InterventionKind::SetBinary),
        "floor" => Ok(InterventionKind::Floor),
        "fixed" | "fixed_value" => Ok(InterventionKind::Fixed),
        _ => Err(PyValueError::new_err(format!("unknown intervention kind '{s}'"))),
    }
}

fn columns(d: &Bound<'_, PyDict>) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut names = Vec::new();
    let mut cols = Vec::new();
    for (k, v) in d.iter() {
        names.push(k.extract::<String>()?);
        cols.push(v.extract::<Vec<f64>>()?);
    }
    Ok((names, cols))
}

fn matrix(cols: &[Vec<f64>], n: usize) -> PyResult<DMatrix<f64>> {
    if let Some(c) = cols.iter().find(|c| c.len() != n) {
        return Err(PyValueError::new_err(format!("column has {} values, outcome has {n}", c.len())));
    }
    Ok(DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]))
}

/// Covariates, treatments, outcome and survey weights.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: rie_core::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Build from column dicts (`name -> list of floats`); insertion order is kept.
    #[new]
    #[pyo3(signature = (outcome, treatments, covariates, survey_weight=None))]
    fn new(
        outcome: Vec<f64>,
        treatments: &Bound<'_, PyDict>,
        covariates: &Bound<'_, PyDict>,
        survey_weight: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let n = outcome.len();
        let (tn, tc) = columns(treatments)?;
        let (cn, cc) = columns(covariates)?;
        let inner = rie_core::Dataset::new(cn, matrix(&cc, n)?, tn, matrix(&tc, n)?, outcome, survey_weight)
            .map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, outcome, treatments, covariates, survey_weight=None))]
    fn from_csv(
        path: &str,
        outcome: String,
        treatments: Vec<String>,
        covariates: Vec<String>,
        survey_weight: Option<String>,
    ) -> PyResult<Self> {
        let schema = Schema { outcome, treatments, covariates, survey_weight, cluster: None, stratum: None };
        Ok(PyDataset { inner: dataset::load_csv(path, &schema).map_err(to_py)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names().to_vec()
    }

    #[getter]
    fn treatment_names(&self) -> Vec<String> {
        self.inner.treatment_names().to_vec()
    }

    #[getter]
    fn outcome(&self) -> Vec<f64> {
        self.inner.outcome().to_vec()
    }

    #[getter]
    fn survey_weight(&self) -> Vec<f64> {
        self.inner.survey_weight().to_vec()
    }

    /// Define an intervention on a treatment column: kind is `set_binary`, `floor` or `fixed`.
    #[pyo3(signature = (treatment, kind, target, name=None))]
    fn intervention(&self, treatment: String, kind: &str, target: f64, name: Option<String>) -> PyResult<PyIntervention> {
        let cfg = InterventionConfig { name, treatment, kind: kind_from(kind)?, target };
        Ok(PyIntervention { inner: cfg.resolve(&self.inner).map_err(to_py)? })
    }

    /// 1.0 for units the intervention leaves unchanged, else 0.0.
    fn nonintervened_indicator(&self, iv: &PyIntervention) -> Vec<f64> {
        dataset::nonintervened_indicator(&self.inner, &iv.inner)
    }

    /// Inverse-covariance weighted index of the named covariates.
    fn icw_index(&self, columns: Vec<String>) -> PyResult<Vec<f64>> {
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        dataset::icw_index(&self.inner, &cols).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, treatments={:?}, covariates={:?})",
            self.inner.n(),
            self.inner.treatment_names(),
            self.inner.covariate_names()
        )
    }
}

#[pyclass(name = "Intervention", frozen)]
struct PyIntervention {
    inner: rie_core::Intervention,
}

#[pymethods]
impl PyIntervention {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn target(&self) -> f64 {
        self.inner.target
    }

    fn __repr__(&self) -> String {
        format!("Intervention({}, {} {})", self.inner.name, self.inner.kind, self.inner.target)
    }
}

#[pyclass(name = "Estimate", frozen, from_py_object)]
#[derive(Clone)]
struct PyEstimate {
    inner: estimators::RieEstimate,
}

#[pymethods]
impl PyEstimate {
    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn intervention(&self) -> String {
        self.inner.intervention.clone()
    }

    #[getter]
    fn psi(&self) -> f64 {
        self.inner.psi
    }

    #[getter]
    fn se(&self) -> f64 {
        self.inner.se
    }

    #[getter]
    fn ci(&self) -> (f64, f64) {
        (self.inner.ci_low, self.inner.ci_high)
    }

    #[getter]
    fn binding_share(&self) -> f64 {
        self.inner.binding_share
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn flags(&self) -> String {
        self.inner.flags.to_string()
    }

    fn __repr__(&self) -> String {
        let e = &self.inner;
        format!("Estimate({} {}: psi={} se={} ci=({}, {}))", e.method, e.intervention, e.psi, e.se, e.ci_low, e.ci_high)
    }
}

fn wrap(inner: estimators::RieEstimate) -> PyEstimate {
    PyEstimate { inner }
}

/// IPW estimate with caller-supplied probabilities of being left unchanged.
#[pyfunction]
#[pyo3(signature = (ds, iv, ghat, alpha=0.05))]
fn rie_ipw(ds: &PyDataset, iv: &PyIntervention, ghat: Vec<f64>, alpha: f64) -> PyResult<PyEstimate> {
    Ok(wrap(estimators::rie_ipw(&ds.inner, &iv.inner, &ghat, alpha).map_err(to_py)?.0))
}

/// IPW with super-learner propensities. Returns `(estimate, weights, ghat)`
/// where `weights` lists `(candidate, cv_risk, weight)`.
#[pyfunction]
#[pyo3(signature = (ds, iv, folds=10, alpha=0.05, seed=0))]
fn ensemble_ipw(
    ds: &PyDataset,
    iv: &PyIntervention,
    folds: usize,
    alpha: f64,
    seed: u64,
) -> PyResult<(PyEstimate, Vec<(String, f64, f64)>, Vec<f64>)> {
    let design = dataset::design_matrix(&ds.inner, iv.inner.treatment_index);
    let target = dataset::nonintervened_indicator(&ds.inner, &iv.inner);
    let library = LearnerSpec::default_library(&design.x, &target);
    let (est, fit) =
        estimators::rie_ensemble_ipw(&ds.inner, &iv.inner, &library, folds, alpha, seed).map_err(to_py)?;
    let ghat = fit.predict(&design.x).map_err(to_py)?;
    let weights = superlearner::weight_report(&fit, &iv.inner.name)
        .into_iter()
        .map(|r| (r.candidate, r.cv_risk, r.weight))
        .collect();
    Ok((wrap(est), weights, ghat))
}

#[pyfunction]
#[pyo3(signature = (ds, iv, alpha=0.05, seed=0))]
fn naive_ipw(ds: &PyDataset, iv: &PyIntervention, alpha: f64, seed: u64) -> PyResult<PyEstimate> {
    Ok(wrap(estimators::rie_naive_ipw(&ds.inner, &iv.inner, alpha, seed).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (ds, iv, alpha=0.05))]
fn ols(ds: &PyDataset, iv: &PyIntervention, alpha: f64) -> PyResult<PyEstimate> {
    Ok(wrap(estimators::rie_ols(&ds.inner, &iv.inner, alpha).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (ds, iv, alpha=0.05, exact=None))]
fn matching(ds: &PyDataset, iv: &PyIntervention, alpha: f64, exact: Option<Vec<String>>) -> PyResult<PyEstimate> {
    let cols: Option<Vec<&str>> = exact.as_ref().map(|v| v.iter().map(String::as_str).collect());
    Ok(wrap(estimators::rie_matching(&ds.inner, &iv.inner, alpha, cols.as_deref()).map_err(to_py)?))
}

/// Pool estimates from multiply imputed data sets.
#[pyfunction]
#[pyo3(signature = (estimates, alpha=0.05))]
fn combine_imputations(estimates: Vec<PyEstimate>, alpha: f64) -> PyResult<PyEstimate> {
    let inner: Vec<_> = estimates.into_iter().map(|e| e.inner).collect();
    Ok(wrap(estimators::combine_imputations(&inner, alpha).map_err(to_py)?))
}

/// Simplex-constrained stacking weights for a list of prediction rows.
#[pyfunction]
fn solve_simplex_weights(cvp: Vec<Vec<f64>>, target: Vec<f64>) -> PyResult<Vec<f64>> {
    let n = cvp.len();
    let k = cvp.first().map_or(0, Vec::len);
    if n != target.len() || k == 0 || cvp.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("cvp must be a non-empty rectangular list with one row per target"));
    }
    let m = DMatrix::from_fn(n, k, |i, c| cvp[i][c]);
    Ok(superlearner::solve_simplex_weights(&m, &target))
}

/// Balance rows as dicts with keys covariate, smd, ci_low, ci_high, adjusted.
#[pyfunction]
#[pyo3(signature = (ds, iv, ghat=None, alpha=0.05))]
fn balance_table<'py>(
    py: Python<'py>,
    ds: &PyDataset,
    iv: &PyIntervention,
    ghat: Option<Vec<f64>>,
    alpha: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let table = diagnostics::balance_table(&ds.inner, &iv.inner, ghat.as_deref(), alpha).map_err(to_py)?;
    table
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("covariate", &r.covariate)?;
            d.set_item("smd", r.smd)?;
            d.set_item("ci_low", r.ci_low)?;
            d.set_item("ci_high", r.ci_high)?;
            d.set_item("adjusted", r.adjusted)?;
            Ok(d)
        })
        .collect()
}

/// One draw of the benchmark design: `(dataset, y0, y1, propensity)`.
#[pyfunction]
#[pyo3(signature = (n=500, noise_dims=0, run=0, seed=0))]
fn gen_data(n: usize, noise_dims: usize, run: usize, seed: u64) -> PyResult<(PyDataset, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let cfg = SimConfig { n, seed, ..SimConfig::default() };
    cfg.validate().map_err(to_py)?;
    let d = simulation::gen_data(&cfg, noise_dims, run);
    Ok((PyDataset { inner: d.dataset }, d.y0, d.y1, d.propensity))
}

/// Benchmark study. Returns `(sd_true_rie, rows)` with one
/// `(method, noise_dims, bias, se, rmse)` row per cell.
#[pyfunction]
#[pyo3(signature = (runs, seed, n=500, noise_dims=vec![0, 5, 10], methods=None, fast=false))]
fn simulate(
    py: Python<'_>,
    runs: usize,
    seed: u64,
    n: usize,
    noise_dims: Vec<usize>,
    methods: Option<Vec<String>>,
    fast: bool,
) -> PyResult<(f64, Vec<(String, usize, f64, f64, f64)>)> {
    let methods = match methods {
        Some(names) => names.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>().map_err(to_py)?,
        None => Method::ALL.to_vec(),
    };
    let cfg = SimConfig { n, noise_levels: noise_dims, n_runs: runs, seed, methods, fast, ..SimConfig::default() };
    let result = py.detach(|| simulation::run_study(&cfg)).map_err(to_py)?;
    let rows =
        result.cells.iter().map(|c| (c.method.to_string(), c.noise_dims, c.bias, c.se, c.rmse)).collect();
    Ok((result.sd_true_rie, rows))
}

#[pymodule]
fn rie(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyIntervention>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(rie_ipw, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_ipw, m)?)?;
    m.add_function(wrap_pyfunction!(naive_ipw, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(matching, m)?)?;
    m.add_function(wrap_pyfunction!(combine_imputations, m)?)?;
    m.add_function(wrap_pyfunction!(solve_simplex_weights, m)?)?;
    m.add_function(wrap_pyfunction!(balance_table, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
