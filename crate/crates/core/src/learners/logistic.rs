use nalgebra::{DMatrix, DVector};

use super::Model;
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, with_intercept};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

/// Logistic regression coefficients (intercept first).
#[derive(Debug, Clone)]
pub struct LogisticModel {
    coef: Vec<f64>,
    std_errors: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl LogisticModel {
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    /// Standard errors from the inverse of the penalized Hessian at the optimum.
    pub fn standard_errors(&self) -> &[f64] {
        &self.std_errors
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Vec<f64> {
        x.row_iter()
            .map(|row| self.coef[0] + row.iter().zip(&self.coef[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

impl Model for LogisticModel {
    fn width(&self) -> usize {
        self.coef.len() - 1
    }

    fn predict_raw(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(sigmoid).collect()
    }
}

/// Newton/IRLS fit minimizing `-loglik + lambda * |beta_{1..}|^2`.
///
/// Stops when the gradient norm drops below 1e-8 or after 100 iterations.
pub fn fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LogisticModel> {
    let design = with_intercept(x);
    let (n, k) = design.shape();
    let y = DVector::from_column_slice(y);
    let mut penalty = DMatrix::<f64>::identity(k, k) * (2.0 * lambda);
    penalty[(0, 0)] = 0.0;

    // Start from the base rate so the intercept begins near its optimum.
    let base = y.mean();
    let mut beta = DVector::zeros(k);
    beta[0] = crate::linalg::logit(base);

    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = &design * beta;
        let ll: f64 = eta
            .iter()
            .zip(y.iter())
            .map(|(&e, &yi)| yi * e - softplus(e))
            .sum();
        -ll + lambda * beta.rows(1, k - 1).norm_squared()
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut current = objective(&beta);
    let mut hessian = DMatrix::zeros(k, k);
    while iterations < MAX_ITER {
        let eta = &design * &beta;
        let p = eta.map(sigmoid);
        let grad = design.tr_mul(&(&y - &p)) - &penalty * &beta;
        let w = p.map(|pi| pi * (1.0 - pi));
        let mut weighted = design.clone();
        for i in 0..n {
            weighted.row_mut(i).scale_mut(w[i]);
        }
        hessian = design.tr_mul(&weighted) + &penalty;
        if grad.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let step = newton_step(&hessian, &grad)?;

        // Step halving keeps the objective monotone under near-separation.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * t;
            let value = objective(&candidate);
            if value.is_finite() && value <= current + 1e-12 * current.abs().max(1.0) {
                beta = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("logistic regression diverged".into()));
    }

    let std_errors = match hessian.clone().try_inverse() {
        Some(inv) => (0..k).map(|i| inv[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::NAN; k],
    };
    Ok(LogisticModel { coef: beta.iter().copied().collect(), std_errors, iterations, converged })
}

fn newton_step(hessian: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = hessian.clone().cholesky() {
        return Ok(chol.solve(grad));
    }
    // Rank-deficient designs (collinear columns): minimum-norm step.
    hessian
        .clone()
        .svd(true, true)
        .solve(grad, 1e-12)
        .map_err(|e| Error::Numeric(format!("logistic Newton step failed: {e}")))
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
