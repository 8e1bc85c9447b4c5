//! Benchmark data generator and Monte Carlo harness.
//!
//! Outcomes and treatment depend on a single confounder `W1`; the propensity
//! is non-monotone in `W1` and the outcome surfaces are polynomial, so a
//! main-effects logistic propensity model and a linear outcome model are both
//! misspecified. Extra pure-noise covariates probe how each estimator copes
//! with irrelevant dimensions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{self, Dataset, Intervention, InterventionKind};
use crate::error::{Error, Result};
use crate::estimators::{self, Method};
use crate::learners::LearnerSpec;
use crate::linalg::sigmoid;
use crate::seed;
use crate::stats;
use crate::superlearner::DEFAULT_FOLDS;

pub const DEFAULT_N: usize = 500;
pub const DEFAULT_RUNS: usize = 250;
pub const DEFAULT_NOISE_LEVELS: [usize; 3] = [0, 5, 10];
/// Folds used by the ensemble in `fast` mode.
pub const FAST_FOLDS: usize = 5;
/// Trees used by the boosted candidate in `fast` mode.
pub const FAST_TREES: usize = 50;

// Stream labels under `root -> run`.
const STREAM_W1: u64 = 1;
const STREAM_EPS0: u64 = 2;
const STREAM_EPS1: u64 = 3;
const STREAM_ASSIGN: u64 = 4;
const STREAM_NOISE: u64 = 5;
const STREAM_METHOD: u64 = 6;

/// Data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Dgp {
    /// The non-linear benchmark design.
    #[default]
    Benchmark,
    /// Noise-free check design: `Y0 = W1`, `Y1 = W1 + tau`, benchmark assignment.
    LinearHomogeneous { tau: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub noise_levels: Vec<usize>,
    pub n_runs: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Fewer candidates and folds for smoke runs.
    pub fast: bool,
    pub dgp: Dgp,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: DEFAULT_N,
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            n_runs: DEFAULT_RUNS,
            seed: 20190101,
            methods: Method::ALL.to_vec(),
            alpha: 0.05,
            fast: false,
            dgp: Dgp::Benchmark,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::Parameter(format!("simulation needs n >= 20, got {}", self.n)));
        }
        if self.n_runs == 0 {
            return Err(Error::Parameter("simulation needs at least one run".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Parameter("simulation needs at least one method".into()));
        }
        if self.noise_levels.is_empty() {
            return Err(Error::Parameter("simulation needs at least one noise level".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn folds(&self) -> usize {
        if self.fast { FAST_FOLDS } else { DEFAULT_FOLDS }
    }

    /// Candidate library for a design matrix under this configuration.
    pub fn library(&self, x: &DMatrix<f64>, y: &[f64]) -> Vec<LearnerSpec> {
        if self.fast {
            vec![
                LearnerSpec::Logistic,
                LearnerSpec::TreeEnsemble {
                    n_trees: FAST_TREES,
                    max_depth: crate::learners::DEFAULT_TREE_DEPTH,
                    learning_rate: crate::learners::DEFAULT_LEARNING_RATE,
                },
            ]
        } else {
            LearnerSpec::default_library(x, y)
        }
    }
}

/// One simulated sample with its potential outcomes.
#[derive(Debug, Clone)]
pub struct SimData {
    pub dataset: Dataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// True `P(A = 1 | W1)`.
    pub propensity: Vec<f64>,
}

impl SimData {
    pub fn treatment(&self) -> Vec<f64> {
        self.dataset.treatment(0)
    }

    pub fn true_rie(&self) -> f64 {
        true_rie(&self.treatment(), &self.y0, &self.y1)
    }

    /// True probability of being left unchanged by [`remove_treatment`].
    pub fn nonintervened_propensity(&self) -> Vec<f64> {
        self.propensity.iter().map(|p| 1.0 - p).collect()
    }
}

/// The intervention studied in the benchmark: set `A = 0` for everyone.
pub fn remove_treatment() -> Intervention {
    Intervention::new("remove_a", 0, InterventionKind::SetBinary, 0.0)
}

/// Draw run `run_index` with `noise_dims` extra covariates. Each variable has
/// its own stream keyed by `(seed, run, variable)`, so the confounder,
/// outcomes and assignment are shared across noise levels and the noise
/// columns are nested.
pub fn gen_data(cfg: &SimConfig, noise_dims: usize, run_index: usize) -> SimData {
    let n = cfg.n;
    let run = run_index as u64;
    let draw = |stream: u64, sd: f64| -> Vec<f64> {
        let mut rng = seed::rng(cfg.seed, &[run, stream]);
        let dist = Normal::new(0.0, sd).expect("positive sd");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    let w1 = draw(STREAM_W1, 1.0);
    let min = w1.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = stats::mean(&w1);

    let propensity: Vec<f64> = w1.iter().map(|&w| sigmoid(-0.5 + 0.75 * w - 0.5 * (w - mean).powi(2))).collect();
    let mut assign = seed::rng(cfg.seed, &[run, STREAM_ASSIGN]);
    let a: Vec<f64> = propensity.iter().map(|&p| f64::from(assign.random::<f64>() < p)).collect();

    let (y0, y1): (Vec<f64>, Vec<f64>) = match cfg.dgp {
        Dgp::Benchmark => {
            let e0 = draw(STREAM_EPS0, 5.0);
            let e1 = draw(STREAM_EPS1, 10.0);
            w1.iter()
                .enumerate()
                .map(|(i, &w)| {
                    let d = w - min;
                    (w + 0.5 * d * d + e0[i], w + 0.75 * d * d + 0.75 * d * d * d + e1[i])
                })
                .unzip()
        }
        Dgp::LinearHomogeneous { tau } => w1.iter().map(|&w| (w, w + tau)).unzip(),
    };
    let y: Vec<f64> = (0..n).map(|i| if a[i] == 1.0 { y1[i] } else { y0[i] }).collect();

    let mut cov = DMatrix::zeros(n, 1 + noise_dims);
    cov.column_mut(0).copy_from_slice(&w1);
    for k in 0..noise_dims {
        let mut rng = seed::rng(cfg.seed, &[run, STREAM_NOISE, k as u64]);
        for i in 0..n {
            cov[(i, 1 + k)] = rng.sample(StandardNormal);
        }
    }
    let mut names = vec!["w1".to_string()];
    names.extend((1..=noise_dims).map(|k| format!("noise{k}")));
    let dataset = Dataset::new(names, cov, vec!["a".into()], DMatrix::from_column_slice(n, 1, &a), y, None)
        .expect("simulated data satisfy dataset invariants");
    SimData { dataset, y0, y1, propensity }
}

/// Sample RIE of removing a binary treatment: `mean(A * (Y0 - Y1))`.
pub fn true_rie(a: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
    assert!(a.len() == y0.len() && a.len() == y1.len(), "true_rie needs equal lengths");
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(y0).zip(y1).map(|((a, y0), y1)| a * (y0 - y1)).sum::<f64>() / a.len() as f64
}

/// Run one estimator on one simulated sample.
pub fn estimate(cfg: &SimConfig, data: &SimData, method: Method, method_seed: u64) -> Result<f64> {
    let ds = &data.dataset;
    let iv = remove_treatment();
    let est = match method {
        Method::Ols => estimators::rie_ols(ds, &iv, cfg.alpha)?,
        Method::NaiveIpw => estimators::rie_naive_ipw(ds, &iv, cfg.alpha, method_seed)?,
        Method::Matching => estimators::rie_matching(ds, &iv, cfg.alpha, None)?,
        Method::EnsembleIpw => {
            let design = dataset::design_matrix(ds, iv.treatment_index);
            let target = dataset::nonintervened_indicator(ds, &iv);
            let library = cfg.library(&design.x, &target);
            estimators::rie_ensemble_ipw(ds, &iv, &library, cfg.folds(), cfg.alpha, method_seed)?.0
        }
    };
    Ok(est.psi)
}

/// Outcome of one run at one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub noise_dims: usize,
    pub truth: f64,
    /// One entry per configured method, in configuration order.
    pub estimates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub run: usize,
    pub noise_dims: usize,
    pub method: Method,
    pub message: String,
}

/// Standardized error summary for one `(method, noise_dims)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub noise_dims: usize,
    /// Mean of `estimate - truth`.
    pub bias: f64,
    /// Population SD of `estimate - truth`, so `rmse^2 = bias^2 + se^2`.
    pub se: f64,
    pub rmse: f64,
    /// SD of the raw estimates across runs.
    pub sd_estimates: f64,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStudyResult {
    pub methods: Vec<Method>,
    pub noise_levels: Vec<usize>,
    /// SD (n - 1) of the true sample RIE across runs; the standardizing unit.
    pub sd_true_rie: f64,
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<Failure>,
}

impl SimStudyResult {
    pub fn cell(&self, method: Method, noise_dims: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.noise_dims == noise_dims)
    }
}

/// Monte Carlo study over all configured noise levels and methods. Runs are
/// executed in parallel; results are collected and aggregated in run order,
/// so the output is identical for any thread count.
pub fn run_study(cfg: &SimConfig) -> Result<SimStudyResult> {
    cfg.validate()?;
    let tasks: Vec<(usize, usize)> =
        cfg.noise_levels.iter().flat_map(|&k| (0..cfg.n_runs).map(move |r| (k, r))).collect();
    let outcomes: Vec<(RunRecord, Vec<Failure>)> = tasks
        .par_iter()
        .map(|&(noise_dims, run)| {
            let data = gen_data(cfg, noise_dims, run);
            let truth = data.true_rie();
            let mut failures = Vec::new();
            let estimates = cfg
                .methods
                .iter()
                .enumerate()
                .map(|(m, &method)| {
                    let s = seed::derive(cfg.seed, &[run as u64, STREAM_METHOD, noise_dims as u64, m as u64]);
                    match estimate(cfg, &data, method, s) {
                        Ok(v) if v.is_finite() => Some(v),
                        Ok(v) => {
                            failures.push(Failure { run, noise_dims, method, message: format!("non-finite estimate {v}") });
                            None
                        }
                        Err(e) => {
                            failures.push(Failure { run, noise_dims, method, message: e.to_string() });
                            None
                        }
                    }
                })
                .collect();
            (RunRecord { run, noise_dims, truth, estimates }, failures)
        })
        .collect();

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (r, f) in outcomes {
        runs.push(r);
        failures.extend(f);
    }

    // The truth does not depend on the noise columns.
    let truths: Vec<f64> = runs.iter().filter(|r| r.noise_dims == cfg.noise_levels[0]).map(|r| r.truth).collect();
    let sd_true_rie = if truths.len() > 1 { stats::sd(&truths) } else { f64::NAN };

    let mut cells = Vec::new();
    for &noise_dims in &cfg.noise_levels {
        for (m, &method) in cfg.methods.iter().enumerate() {
            let mut errors = Vec::new();
            let mut raw = Vec::new();
            let mut failed = 0;
            for r in runs.iter().filter(|r| r.noise_dims == noise_dims) {
                match r.estimates[m] {
                    Some(v) => {
                        errors.push((v - r.truth) / sd_true_rie);
                        raw.push(v / sd_true_rie);
                    }
                    None => failed += 1,
                }
            }
            cells.push(summarize(method, noise_dims, &errors, &raw, failed));
        }
    }
    Ok(SimStudyResult {
        methods: cfg.methods.clone(),
        noise_levels: cfg.noise_levels.clone(),
        sd_true_rie,
        cells,
        runs,
        failures,
    })
}

fn summarize(method: Method, noise_dims: usize, errors: &[f64], raw: &[f64], failed: usize) -> CellSummary {
    let k = errors.len();
    let (bias, se, rmse, sd_estimates) = if k == 0 {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let bias = stats::mean(errors);
        let se = (errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / k as f64).sqrt();
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / k as f64).sqrt();
        let sd_estimates = if k > 1 { stats::sd(raw) } else { 0.0 };
        (bias, se, rmse, sd_estimates)
    };
    CellSummary { method, noise_dims, bias, se, rmse, sd_estimates, succeeded: k, failed }
}
