use nalgebra::{DMatrix, DVector};

use super::Model;
use crate::error::{Error, Result};
use crate::linalg::{column_moments, standardize_with};

/// Fitted kernel regularized least squares model.
#[derive(Debug, Clone)]
pub struct Krls {
    means: Vec<f64>,
    sds: Vec<f64>,
    train: DMatrix<f64>,
    dual: DVector<f64>,
    offset: f64,
    sigma2: f64,
    lambda: f64,
}

impl Krls {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

impl Model for Krls {
    fn width(&self) -> usize {
        self.means.len()
    }

    fn predict_raw(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let z = standardize_with(x, &self.means, &self.sds);
        (0..z.nrows())
            .map(|i| {
                let mut acc = self.offset;
                for t in 0..self.train.nrows() {
                    acc += self.dual[t] * gaussian(&z, i, &self.train, t, self.sigma2);
                }
                acc
            })
            .collect()
    }
}

fn gaussian(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize, sigma2: f64) -> f64 {
    let mut d2 = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(j, c)];
        d2 += d * d;
    }
    (-d2 / sigma2).exp()
}

/// Fit `f(x) = mean(y) + sum_t c_t k(x, x_t)` with `c = (K + lambda I)^{-1} (y - mean(y))`.
///
/// With `lambda = None` the penalty minimizes the closed-form leave-one-out
/// error over `[1e-6, n]` by golden-section search in log space.
pub fn fit(x: &DMatrix<f64>, y: &[f64], sigma2: f64, lambda: Option<f64>) -> Result<Krls> {
    let n = x.nrows();
    let (means, sds) = column_moments(x);
    let train = standardize_with(x, &means, &sds);
    let kernel = DMatrix::from_fn(n, n, |i, j| gaussian(&train, i, &train, j, sigma2));
    let offset = y.iter().sum::<f64>() / n as f64;
    let centred = DVector::from_iterator(n, y.iter().map(|v| v - offset));

    let (dual, lambda) = match lambda {
        Some(l) => {
            let mut a = kernel;
            for i in 0..n {
                a[(i, i)] += l;
            }
            let dual = match a.clone().cholesky() {
                Some(c) => c.solve(&centred),
                None => a
                    .svd(true, true)
                    .solve(&centred, 1e-14)
                    .map_err(|e| Error::Numeric(format!("krls solve failed: {e}")))?,
            };
            (dual, l)
        }
        None => {
            let eig = kernel.symmetric_eigen();
            let q = eig.eigenvectors;
            let vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
            let qty = q.tr_mul(&centred);
            let q2 = q.map(|v| v * v);
            let loo = |l: f64| -> f64 {
                let inv: DVector<f64> = DVector::from_iterator(n, vals.iter().map(|v| 1.0 / (v + l)));
                let c = &q * qty.component_mul(&inv);
                let diag = &q2 * &inv;
                c.iter().zip(diag.iter()).map(|(ci, di)| (ci / di).powi(2)).sum()
            };
            let best = golden_section(|t| loo(t.exp()), (1e-6f64).ln(), (n as f64).ln(), 1e-3);
            let l = best.exp();
            let inv = DVector::from_iterator(n, vals.iter().map(|v| 1.0 / (v + l)));
            (&q * qty.component_mul(&inv), l)
        }
    };
    if dual.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("krls dual coefficients are not finite".into()));
    }
    Ok(Krls { means, sds, train, dual, offset, sigma2, lambda })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n).map(|i| f64::from(x[(i, 0)] * x[(i, 1)] > 0.0)).collect();
        (x, y)
    }

    #[test]
    fn tiny_penalty_interpolates_training_labels() {
        let (x, y) = data(30, 1);
        let m = fit(&x, &y, 2.0, Some(1e-10)).unwrap();
        for (p, t) in m.predict_raw(&x).iter().zip(&y) {
            assert!((p - t).abs() < 1e-3, "{p} vs {t}");
        }
    }

    #[test]
    fn invariant_to_affine_rescaling_of_a_column() {
        let (x, y) = data(60, 2);
        let mut scaled = x.clone();
        scaled.column_mut(1).apply(|v| *v = 3.5 * *v - 12.0);
        let a = fit(&x, &y, 2.0, None).unwrap();
        let b = fit(&scaled, &y, 2.0, None).unwrap();
        for (p, q) in a.predict_raw(&x).iter().zip(b.predict_raw(&scaled)) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn closed_form_loo_matches_brute_force_refits() {
        let (x, y) = data(25, 3);
        let n = 25;
        let (means, sds) = column_moments(&x);
        let z = standardize_with(&x, &means, &sds);
        let k = DMatrix::from_fn(n, n, |i, j| gaussian(&z, i, &z, j, 2.0));
        let offset = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - offset));
        let lambda = 0.37;

        let mut g = k.clone();
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        let ginv = g.try_inverse().unwrap();
        let c = &ginv * &yc;

        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
            let mut sub = k.select_rows(&keep).select_columns(&keep);
            for d in 0..n - 1 {
                sub[(d, d)] += lambda;
            }
            let yk = DVector::from_iterator(n - 1, keep.iter().map(|&r| yc[r]));
            let ck = sub.cholesky().unwrap().solve(&yk);
            let pred: f64 = keep.iter().zip(ck.iter()).map(|(&r, cr)| k[(i, r)] * cr).sum();
            let shortcut = c[i] / ginv[(i, i)];
            assert!((yc[i] - pred - shortcut).abs() < 1e-9, "row {i}");
        }

        let m = fit(&x, &y, 2.0, None).unwrap();
        assert!(m.lambda() > 1e-6 && m.lambda() < n as f64);
    }
}
