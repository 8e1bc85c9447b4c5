//! Survey-weighted summary statistics shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (x.len() as f64 - 1.0)).sqrt()
}

pub fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let (num, den) = x
        .iter()
        .zip(w)
        .fold((0.0, 0.0), |(n, d), (xi, wi)| (n + wi * xi, d + wi));
    num / den
}

/// Kish effective sample size `(sum w)^2 / sum w^2`; equals `n` for equal weights.
pub fn effective_n(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    s * s / s2
}

/// Weighted sample variance with the `n_eff / (n_eff - 1)` correction, so it
/// reduces to the usual `n - 1` sample variance under equal weights.
pub fn weighted_variance(x: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(x, w);
    let s: f64 = w.iter().sum();
    let biased: f64 = x.iter().zip(w).map(|(xi, wi)| wi * (xi - m).powi(2)).sum::<f64>() / s;
    let n_eff = effective_n(w);
    if n_eff <= 1.0 {
        return 0.0;
    }
    biased * n_eff / (n_eff - 1.0)
}

/// Standard error of a weighted mean: `sqrt(var_w(x) / n_eff)`.
pub fn weighted_mean_se(x: &[f64], w: &[f64]) -> f64 {
    (weighted_variance(x, w) / effective_n(w)).sqrt()
}

/// Two-sided normal critical value `z_{alpha/2}`.
pub fn z_critical(alpha: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - alpha / 2.0)
}
