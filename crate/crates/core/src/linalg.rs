//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column means and sample standard deviations.
pub fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - m).powi(2)).sum();
        means.push(m);
        sds.push((ss / (n - 1.0)).sqrt());
    }
    (means, sds)
}

/// Apply `(x - mean) / sd` column-wise; zero-variance columns are centred only.
pub fn standardize_with(x: &DMatrix<f64>, means: &[f64], sds: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let scale = if sds[j] > 0.0 { sds[j] } else { 1.0 };
        col.apply(|v| *v = (*v - means[j]) / scale);
    }
    out
}

/// Sample covariance matrix of the columns of `x`.
pub fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let (means, _) = column_moments(x);
    let mut centred = x.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    centred.tr_mul(&centred) / (n as f64 - 1.0)
}

/// Solve a symmetric positive-definite system, failing with a numeric error
/// when the matrix is not numerically positive definite.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("{what}: matrix is not positive definite")))?;
    Ok(chol.solve(b))
}

/// Ratio of the smallest to the largest singular value.
pub fn inverse_condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Append an intercept column of ones on the left.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, x.ncols() + 1);
    out.column_mut(0).fill(1.0);
    out.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn all_finite(x: &DMatrix<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}
