//! Cross-validated stacking of propensity candidates ("super learner").
//!
//! Each candidate is fitted V times, each time leaving one fold out, so that
//! every unit receives a held-out prediction from every candidate. Stacking
//! weights minimize the held-out mean squared error over the probability
//! simplex; the candidates are then refitted on all rows and combined with
//! those weights.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{self, Dataset, Intervention};
use crate::error::{Error, Result};
use crate::learners::{FittedLearner, Learner};
use crate::seed;
use crate::PROPENSITY_CLIP;

pub const DEFAULT_FOLDS: usize = 10;

/// Balanced random assignment of `n` units to `folds` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: usize,
    assignment: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Rows held out in fold `v`, ascending.
    pub fn held_out(&self, v: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] == v).collect()
    }

    /// Rows used for training when fold `v` is held out, ascending.
    pub fn training(&self, v: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != v).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &v in &self.assignment {
            sizes[v] += 1;
        }
        sizes
    }
}

/// Shuffle the row indices and deal them round-robin into `folds` folds.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {folds}")));
    }
    if folds > n {
        return Err(Error::Parameter(format!("{folds} folds requested for only {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, &[0xF01D]));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(FoldPlan { folds, assignment, seed })
}

/// Folds balanced within each level of a 0/1 target (optional; not the default).
pub fn make_stratified_folds(target: &[f64], folds: usize, seed: u64) -> Result<FoldPlan> {
    let n = target.len();
    if folds < 2 || folds > n {
        return Err(Error::Parameter(format!("cannot make {folds} folds from {n} rows")));
    }
    let mut rng = seed::rng(seed, &[0x57A7]);
    let mut assignment = vec![0; n];
    let mut next = 0;
    for class in [0.0, 1.0] {
        let mut rows: Vec<usize> = (0..n).filter(|&i| target[i] == class).collect();
        rows.shuffle(&mut rng);
        for i in rows {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(FoldPlan { folds, assignment, seed })
}

/// Seed handed to candidate `candidate` when fitted with fold `fold` held out.
/// `fold == folds` denotes the full-data refit.
pub fn fit_seed(root: u64, candidate: usize, fold: usize) -> u64 {
    seed::derive(root, &[candidate as u64, fold as u64])
}

/// Held-out predictions: entry `(i, c)` comes from candidate `c` fitted on
/// every fold except the one holding unit `i`.
pub fn cv_predictions<L: Learner>(
    x: &DMatrix<f64>,
    target: &[f64],
    learners: &[L],
    plan: &FoldPlan,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if plan.len() != n || target.len() != n {
        return Err(Error::Invalid(format!(
            "fold plan covers {} rows, target {} rows, design {} rows",
            plan.len(),
            target.len(),
            n
        )));
    }
    let tasks: Vec<(usize, usize)> =
        (0..learners.len()).flat_map(|c| (0..plan.folds()).map(move |v| (c, v))).collect();
    let results: Vec<Result<(usize, Vec<usize>, Vec<f64>)>> = tasks
        .par_iter()
        .map(|&(c, v)| {
            let train = plan.training(v);
            let held = plan.held_out(v);
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| target[i]).collect();
            let wrap = |e: Error| Error::Fold { fold: v, candidate: learners[c].name(), source: Box::new(e) };
            let fitted = learners[c].fit(&xt, &yt, fit_seed(seed, c, v)).map_err(wrap)?;
            let preds = fitted.predict(&x.select_rows(&held)).map_err(wrap)?;
            Ok((c, held, preds))
        })
        .collect();
    let mut out = DMatrix::zeros(n, learners.len());
    for r in results {
        let (c, held, preds) = r?;
        for (i, p) in held.into_iter().zip(preds) {
            out[(i, c)] = p;
        }
    }
    Ok(out)
}

/// Per-candidate CV risk `(1/N) sum_i (target_i - cvp_ic)^2`.
pub fn cv_risk(cvp: &DMatrix<f64>, target: &[f64]) -> Vec<f64> {
    let n = cvp.nrows() as f64;
    cvp.column_iter()
        .map(|col| col.iter().zip(target).map(|(p, y)| (y - p).powi(2)).sum::<f64>() / n)
        .collect()
}

/// Mean squared error of the stacked prediction `cvp * w`.
pub fn stacked_objective(cvp: &DMatrix<f64>, target: &[f64], w: &[f64]) -> f64 {
    let n = cvp.nrows();
    (0..n)
        .map(|i| {
            let fit: f64 = (0..cvp.ncols()).map(|c| cvp[(i, c)] * w[c]).sum();
            (target[i] - fit).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

/// Minimize the stacked squared error over the probability simplex.
///
/// Non-negative least squares (Lawson-Hanson) gives a starting point that is
/// rescaled to sum to one, then refined by accelerated projected gradient and
/// polished by an exact solve on the final support. Identical columns share
/// their combined weight equally.
pub fn solve_simplex_weights(cvp: &DMatrix<f64>, target: &[f64]) -> Vec<f64> {
    let c = cvp.ncols();
    if c == 0 {
        return Vec::new();
    }
    if c == 1 {
        return vec![1.0];
    }

    // Group exact duplicate columns.
    let mut group_of = vec![usize::MAX; c];
    let mut reps: Vec<usize> = Vec::new();
    for j in 0..c {
        if let Some(g) = reps.iter().position(|&r| cvp.column(r) == cvp.column(j)) {
            group_of[j] = g;
        } else {
            group_of[j] = reps.len();
            reps.push(j);
        }
    }
    let z = cvp.select_columns(&reps);
    let y = DVector::from_column_slice(target);
    let n = z.nrows() as f64;
    let q = z.tr_mul(&z) / n;
    let b = z.tr_mul(&y) / n;

    let w = simplex_qp(&q, &b);

    let mut counts = vec![0usize; reps.len()];
    for &g in &group_of {
        counts[g] += 1;
    }
    let mut out: Vec<f64> = group_of.iter().map(|&g| w[g] / counts[g] as f64).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// `min w'Qw - 2 b'w` subject to `w >= 0`, `sum w = 1`.
fn simplex_qp(q: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let c = b.len();
    let obj = |w: &DVector<f64>| w.dot(&(q * w)) - 2.0 * b.dot(w);

    let start = nnls(q, b);
    let total = start.sum();
    let mut w = if total > 0.0 { start / total } else { DVector::from_element(c, 1.0 / c as f64) };

    let lipschitz = q.clone().symmetric_eigen().eigenvalues.max().max(1e-300);
    let step = 1.0 / (2.0 * lipschitz);
    let mut momentum = w.clone();
    let mut t = 1.0f64;
    let mut best = obj(&w);
    for _ in 0..20_000 {
        let grad = 2.0 * (q * &momentum - b);
        let next = project_simplex(&(&momentum - grad * step));
        let value = obj(&next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = (&next - &w).amax();
        if value > best {
            // Adaptive restart.
            momentum = w.clone();
            t = 1.0;
            continue;
        }
        momentum = &next + (&next - &w) * ((t - 1.0) / t_next);
        w = next;
        best = value;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }

    if let Some(polished) = polish(q, b, &w) {
        if obj(&polished) <= obj(&w) {
            w = polished;
        }
    }
    w.iter().copied().collect()
}

/// Exact equality-constrained solve on the support of `w`.
fn polish(q: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-12).collect();
    let s = support.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (a, &i) in support.iter().enumerate() {
        for (bb, &j) in support.iter().enumerate() {
            kkt[(a, bb)] = q[(i, j)];
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
        rhs[a] = b[i];
    }
    rhs[s] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let mut out = DVector::zeros(w.len());
    for (a, &i) in support.iter().enumerate() {
        if !(sol[a] >= 0.0) {
            return None;
        }
        out[i] = sol[a];
    }
    let total = out.sum();
    Some(out / total)
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumulative += uk;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if uk - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Lawson-Hanson active set NNLS on the normal equations `Q w = b`.
fn nnls(q: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let c = b.len();
    let mut w = DVector::zeros(c);
    let mut passive = vec![false; c];
    let scale = b.amax().max(q.amax()).max(1e-300);
    let tol = 1e-12 * scale;
    for _ in 0..(3 * c + 10) {
        let grad = b - q * &w;
        let Some(enter) = (0..c)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &bb| grad[a].total_cmp(&grad[bb]).then(bb.cmp(&a)))
        else {
            break;
        };
        passive[enter] = true;
        loop {
            let idx: Vec<usize> = (0..c).filter(|&j| passive[j]).collect();
            let sub = q.select_rows(&idx).select_columns(&idx);
            let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&j| b[j]));
            let Some(s) = sub.clone().cholesky().map(|ch| ch.solve(&rhs)).or_else(|| sub.lu().solve(&rhs)) else {
                passive[enter] = false;
                return w;
            };
            if s.iter().all(|&v| v > 0.0) {
                for (k, &j) in idx.iter().enumerate() {
                    w[j] = s[k];
                }
                break;
            }
            // Step back toward the feasible region and drop blocking variables.
            let mut alpha = 1.0f64;
            for (k, &j) in idx.iter().enumerate() {
                if s[k] <= 0.0 {
                    alpha = alpha.min(w[j] / (w[j] - s[k]));
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                w[j] += alpha * (s[k] - w[j]);
                if w[j] <= 1e-15 {
                    w[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    w
}

/// Output of [`fit_superlearner`]: CV diagnostics plus full-data refits.
#[derive(Debug, Clone)]
pub struct EnsembleFit {
    pub candidate_names: Vec<String>,
    pub cv_predictions: DMatrix<f64>,
    pub cv_risk: Vec<f64>,
    pub weights: Vec<f64>,
    pub full_fits: Vec<FittedLearner>,
    pub fold_plan: FoldPlan,
    pub clip: f64,
}

impl EnsembleFit {
    /// `sum_c w_c * predict_c(x)`, clipped to `[clip, 1 - clip]`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.nrows()];
        for (fit, &w) in self.full_fits.iter().zip(&self.weights) {
            let preds = fit.predict(x)?;
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(preds) {
                *o += w * p;
            }
        }
        Ok(out.into_iter().map(|p| p.clamp(self.clip, 1.0 - self.clip)).collect())
    }

    /// CV risk of the stacked held-out predictions.
    pub fn ensemble_cv_risk(&self, target: &[f64]) -> f64 {
        stacked_objective(&self.cv_predictions, target, &self.weights)
    }

    /// True if any full-data refit fell back to a base rate.
    pub fn any_degenerate(&self) -> bool {
        self.full_fits.iter().any(FittedLearner::is_degenerate)
    }
}

/// Free-function form of [`EnsembleFit::predict`].
pub fn ensemble_predict(fit: &EnsembleFit, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    fit.predict(x)
}

/// Cross-validate, stack and refit candidates on a prepared design and target.
pub fn fit_ensemble<L: Learner>(
    x: &DMatrix<f64>,
    target: &[f64],
    learners: &[L],
    plan: FoldPlan,
    seed: u64,
) -> Result<EnsembleFit> {
    if learners.is_empty() {
        return Err(Error::Parameter("the candidate library is empty".into()));
    }
    let cvp = cv_predictions(x, target, learners, &plan, seed)?;
    let risk = cv_risk(&cvp, target);
    let weights = solve_simplex_weights(&cvp, target);
    let folds = plan.folds();
    let full_fits = learners
        .par_iter()
        .enumerate()
        .map(|(c, l)| l.fit(x, target, fit_seed(seed, c, folds)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleFit {
        candidate_names: learners.iter().map(Learner::name).collect(),
        cv_predictions: cvp,
        cv_risk: risk,
        weights,
        full_fits,
        fold_plan: plan,
        clip: PROPENSITY_CLIP,
    })
}

/// Full pipeline for one intervention: design matrix `(W, A_-j)`, the
/// non-intervened indicator as target, `folds`-fold CV, stacking, refits.
pub fn fit_superlearner<L: Learner>(
    ds: &Dataset,
    iv: &Intervention,
    learners: &[L],
    folds: usize,
    seed: u64,
) -> Result<EnsembleFit> {
    iv.validate(ds)?;
    let design = dataset::design_matrix(ds, iv.treatment_index);
    let target = dataset::nonintervened_indicator(ds, iv);
    let plan = make_folds(ds.n(), folds, seed)?;
    fit_ensemble(&design.x, &target, learners, plan, seed)
}

/// One row of the stacking weight report.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub intervention: String,
    pub candidate: String,
    pub cv_risk: f64,
    pub weight: f64,
}

pub fn weight_report(fit: &EnsembleFit, intervention: &str) -> Vec<WeightRow> {
    fit.candidate_names
        .iter()
        .zip(&fit.cv_risk)
        .zip(&fit.weights)
        .map(|((name, &risk), &w)| WeightRow {
            intervention: intervention.to_string(),
            candidate: name.clone(),
            cv_risk: risk,
            weight: w,
        })
        .collect()
}
