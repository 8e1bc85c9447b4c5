//! Point estimators for retrospective intervention effects, their standard
//! errors, and pooling across multiply-imputed datasets.
//!
//! Every estimator returns `psi = counterfactual mean - observed mean` using
//! survey-weighted means, so uniform rescaling of the survey weights leaves
//! all outputs unchanged.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{self, Dataset, Intervention};
use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerSpec};
use crate::linalg;
use crate::stats;
use crate::superlearner::{self, EnsembleFit};
use crate::PROPENSITY_CLIP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    EnsembleIpw,
    NaiveIpw,
    Ols,
    Matching,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ols, Method::NaiveIpw, Method::Matching, Method::EnsembleIpw];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::EnsembleIpw => "ensemble_ipw",
            Method::NaiveIpw => "naive_ipw",
            Method::Ols => "ols",
            Method::Matching => "matching",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method '{s}'")))
    }
}

/// Caveats attached to an estimate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Flags {
    /// A propensity fit saw a single class and fell back to its base rate.
    pub degenerate_fit: bool,
    /// The standard error is a documented approximation (matching).
    pub approximate_se: bool,
    /// Number of imputations pooled, when the estimate is a pooled one.
    pub imputations: Option<usize>,
}

impl Flags {
    pub fn merge(&self, other: &Flags) -> Flags {
        Flags {
            degenerate_fit: self.degenerate_fit || other.degenerate_fit,
            approximate_se: self.approximate_se || other.approximate_se,
            imputations: self.imputations.or(other.imputations),
        }
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.degenerate_fit {
            parts.push("degenerate_fit".to_string());
        }
        if self.approximate_se {
            parts.push("approximate_se".to_string());
        }
        if let Some(m) = self.imputations {
            parts.push(format!("imputations={m}"));
        }
        f.write_str(&parts.join(";"))
    }
}

impl FromStr for Flags {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut flags = Flags::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "degenerate_fit" => flags.degenerate_fit = true,
                "approximate_se" => flags.approximate_se = true,
                other => {
                    let m = other
                        .strip_prefix("imputations=")
                        .and_then(|m| m.parse().ok())
                        .ok_or_else(|| Error::Usage(format!("unknown flag '{other}'")))?;
                    flags.imputations = Some(m);
                }
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RieEstimate {
    pub method: Method,
    pub intervention: String,
    pub psi: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub binding_share: f64,
    pub n: usize,
    pub flags: Flags,
}

impl RieEstimate {
    fn wald(
        method: Method,
        iv: &Intervention,
        psi: f64,
        se: f64,
        alpha: f64,
        binding_share: f64,
        n: usize,
    ) -> Self {
        Self::from_parts(method, &iv.name, psi, se, alpha, binding_share, n, Flags::default())
    }

    /// Rebuild an estimate with a normal-theory interval, e.g. from a results file.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        method: Method,
        intervention: &str,
        psi: f64,
        se: f64,
        alpha: f64,
        binding_share: f64,
        n: usize,
        flags: Flags,
    ) -> Self {
        let half = stats::z_critical(alpha) * se;
        Self {
            method,
            intervention: intervention.to_string(),
            psi,
            se,
            ci_low: psi - half,
            ci_high: psi + half,
            alpha,
            binding_share,
            n,
            flags,
        }
    }

    /// True when the Wald interval contains `value`.
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Per-unit influence values whose survey-weighted mean is the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceValues {
    pub d: Vec<f64>,
}

/// How the inverse-propensity weights enter the counterfactual mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IpwWeighting {
    /// Weighted mean of `Y` among non-intervened units with weights
    /// `w_i / ghat_i`, normalized to sum to one. Location invariant.
    #[default]
    Hajek,
    /// `(1/N) sum_i I_i Y_i / ghat_i` with survey weights; the literal
    /// unnormalized form.
    HorvitzThompson,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Inverse-propensity weighted RIE with normalized (Hajek) weights, tagged
/// as `ensemble_ipw`.
pub fn rie_ipw(ds: &Dataset, iv: &Intervention, ghat: &[f64], alpha: f64) -> Result<(RieEstimate, InfluenceValues)> {
    rie_ipw_with(ds, iv, ghat, alpha, IpwWeighting::Hajek, Method::EnsembleIpw)
}

/// Inverse-propensity weighted RIE.
///
/// `ghat[i]` estimates `Pr[A_j = a_j | W_i, A_-ji]` and must lie in
/// `[PROPENSITY_CLIP, 1]`. The standard error is
/// `sqrt(var_w(D) / n_eff)` with `D` the influence values.
pub fn rie_ipw_with(
    ds: &Dataset,
    iv: &Intervention,
    ghat: &[f64],
    alpha: f64,
    weighting: IpwWeighting,
    method: Method,
) -> Result<(RieEstimate, InfluenceValues)> {
    iv.validate(ds)?;
    check_alpha(alpha)?;
    let n = ds.n();
    if ghat.len() != n {
        return Err(Error::Invalid(format!("{} propensity scores for {n} rows", ghat.len())));
    }
    if let Some(i) = ghat.iter().position(|&g| !(PROPENSITY_CLIP..=1.0).contains(&g)) {
        return Err(Error::Positivity(format!(
            "propensity score {} at row {i} is outside [{PROPENSITY_CLIP}, 1]",
            ghat[i]
        )));
    }
    let ind = dataset::nonintervened_indicator(ds, iv);
    let y = ds.outcome();
    let w = ds.survey_weight();
    let total: f64 = w.iter().sum();
    let ratio: Vec<f64> = ind.iter().zip(ghat).map(|(i, g)| i / g).collect();
    let y_bar = stats::weighted_mean(y, w);

    let d: Vec<f64> = match weighting {
        IpwWeighting::HorvitzThompson => ratio.iter().zip(y).map(|(r, yi)| (r - 1.0) * yi).collect(),
        IpwWeighting::Hajek => {
            let mass: f64 = ratio.iter().zip(w).map(|(r, wi)| r * wi).sum::<f64>() / total;
            if mass <= 0.0 {
                return Err(Error::Support(format!(
                    "intervention '{}' binds on every unit; no non-intervened units to reweight",
                    iv.name
                )));
            }
            let mu1: f64 = ratio.iter().zip(y).zip(w).map(|((r, yi), wi)| r * yi * wi).sum::<f64>() / (mass * total);
            // Linearization of the ratio estimator around (mu1, mass).
            ratio
                .iter()
                .zip(y)
                .map(|(r, yi)| r / mass * (yi - mu1) + mu1 - yi)
                .collect()
        }
    };
    let psi = match weighting {
        IpwWeighting::HorvitzThompson => {
            ratio.iter().zip(y).zip(w).map(|((r, yi), wi)| r * yi * wi).sum::<f64>() / total - y_bar
        }
        IpwWeighting::Hajek => stats::weighted_mean(&d, w),
    };
    let se = stats::weighted_mean_se(&d, w);
    let share = dataset::binding_share(ds, iv);
    let est = RieEstimate::wald(method, iv, psi, se, alpha, share, n);
    Ok((est, InfluenceValues { d }))
}

/// IPW with a plain main-effects logistic propensity model on `(W, A_-j)`.
pub fn rie_naive_ipw(ds: &Dataset, iv: &Intervention, alpha: f64, seed: u64) -> Result<RieEstimate> {
    iv.validate(ds)?;
    let design = dataset::design_matrix(ds, iv.treatment_index);
    let target = dataset::nonintervened_indicator(ds, iv);
    let fit = LearnerSpec::Logistic.fit(&design.x, &target, seed)?;
    let ghat = fit.predict(&design.x)?;
    let (mut est, _) = rie_ipw_with(ds, iv, &ghat, alpha, IpwWeighting::Hajek, Method::NaiveIpw)?;
    est.flags.degenerate_fit = fit.is_degenerate();
    Ok(est)
}

/// IPW with super-learner propensity scores; returns the fitted ensemble too.
pub fn rie_ensemble_ipw<L: Learner>(
    ds: &Dataset,
    iv: &Intervention,
    learners: &[L],
    folds: usize,
    alpha: f64,
    seed: u64,
) -> Result<(RieEstimate, EnsembleFit)> {
    let fit = superlearner::fit_superlearner(ds, iv, learners, folds, seed)?;
    let design = dataset::design_matrix(ds, iv.treatment_index);
    let ghat = fit.predict(&design.x)?;
    let (mut est, _) = rie_ipw(ds, iv, &ghat, alpha)?;
    est.flags.degenerate_fit = fit.any_degenerate();
    Ok((est, fit))
}

/// Weighted least squares of `Y` on `(1, A_j, W, A_-j)`.
///
/// `psi` is the mean fitted outcome with `A_j` replaced by its intervened
/// value minus the observed mean, i.e. `beta_j * mean(a_cf - a)`. The
/// standard error scales the HC1 sandwich standard error of `beta_j` by
/// `|mean(a_cf - a)|`.
pub fn rie_ols(ds: &Dataset, iv: &Intervention, alpha: f64) -> Result<RieEstimate> {
    iv.validate(ds)?;
    check_alpha(alpha)?;
    let n = ds.n();
    let share = dataset::binding_share(ds, iv);
    if share == 0.0 {
        return Ok(RieEstimate::wald(Method::Ols, iv, 0.0, 0.0, alpha, share, n));
    }
    let j = iv.treatment_index;
    let design = dataset::design_matrix(ds, j);
    let a = ds.treatment(j);
    let k = design.x.ncols() + 2;
    let mut x = DMatrix::zeros(n, k);
    x.column_mut(0).fill(1.0);
    x.column_mut(1).copy_from_slice(&a);
    x.view_mut((0, 2), (n, k - 2)).copy_from(&design.x);
    if n <= k {
        return Err(Error::Numeric(format!("OLS needs more than {k} rows, got {n}")));
    }

    let w = ds.survey_weight();
    let y = DVector::from_column_slice(ds.outcome());
    let mut xw = x.clone();
    for i in 0..n {
        xw.row_mut(i).scale_mut(w[i]);
    }
    let xtwx = x.tr_mul(&xw);

    // Rank check on the column-normalized design.
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    let mut scaled = xtwx.clone();
    for r in 0..k {
        for c in 0..k {
            scaled[(r, c)] /= norms[r] * norms[c];
        }
    }
    if norms.contains(&0.0) || linalg::inverse_condition(&scaled) < 1e-12 {
        return Err(Error::Numeric(format!(
            "OLS design (intercept, {}, {}) is rank deficient",
            ds.treatment_names()[j],
            design.columns.join(", ")
        )));
    }
    let bread = xtwx
        .try_inverse()
        .ok_or_else(|| Error::Numeric("OLS normal equations are singular".into()))?;
    let beta = &bread * xw.tr_mul(&y);
    let resid = &y - &x * &beta;

    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let s = w[i] * resid[i];
        let row = x.row(i);
        meat += row.transpose() * row * (s * s);
    }
    let cov = &bread * meat * &bread * (n as f64 / (n - k) as f64);
    let se_beta = cov[(1, 1)].max(0.0).sqrt();

    let shift: Vec<f64> = a.iter().map(|&ai| iv.counterfactual_value(ai) - ai).collect();
    let mean_shift = stats::weighted_mean(&shift, w);
    let psi = beta[1] * mean_shift;
    let se = se_beta * mean_shift.abs();
    Ok(RieEstimate::wald(Method::Ols, iv, psi, se, alpha, share, n))
}

/// Result of one nearest-neighbour match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub unit: usize,
    pub donor: usize,
    pub distance: f64,
}

/// Mahalanobis nearest-neighbour matching with replacement.
///
/// Each binding unit borrows the observed outcome of its closest
/// non-intervened unit (optionally within exact-match cells) as its
/// counterfactual. The standard error treats donor reuse through per-unit
/// contributions `D_i = K_i Y_i / w_i` (donors) and `-Y_i` (binding units),
/// where `K_i` is the survey weight matched to donor `i`; it is flagged as
/// approximate.
pub fn rie_matching(
    ds: &Dataset,
    iv: &Intervention,
    alpha: f64,
    exact_columns: Option<&[&str]>,
) -> Result<RieEstimate> {
    let (est, _) = rie_matching_detail(ds, iv, alpha, exact_columns)?;
    Ok(est)
}

/// [`rie_matching`] plus the matches it used.
pub fn rie_matching_detail(
    ds: &Dataset,
    iv: &Intervention,
    alpha: f64,
    exact_columns: Option<&[&str]>,
) -> Result<(RieEstimate, Vec<Match>)> {
    iv.validate(ds)?;
    check_alpha(alpha)?;
    let n = ds.n();
    let share = dataset::binding_share(ds, iv);
    let ind = dataset::nonintervened_indicator(ds, iv);
    let design = dataset::design_matrix(ds, iv.treatment_index);

    let exact: Vec<usize> = exact_columns
        .unwrap_or(&[])
        .iter()
        .map(|name| {
            design
                .columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Schema(format!("exact-matching column '{name}' is not in the design")))
        })
        .collect::<Result<_>>()?;

    let mut est = RieEstimate::wald(Method::Matching, iv, 0.0, 0.0, alpha, share, n);
    est.flags.approximate_se = true;
    if ind.iter().all(|&v| v == 1.0) {
        return Ok((est, Vec::new()));
    }
    let donors: Vec<usize> = (0..n).filter(|&i| ind[i] == 1.0).collect();
    if donors.is_empty() {
        return Err(Error::Support(format!("intervention '{}' leaves no donor units", iv.name)));
    }

    let z = mahalanobis_coordinates(&design.x)?;
    let cell_key = |i: usize| -> Vec<u64> { exact.iter().map(|&c| design.x[(i, c)].to_bits()).collect() };

    let mut matches = Vec::new();
    for unit in (0..n).filter(|&i| ind[i] == 0.0) {
        let key = cell_key(unit);
        let mut best: Option<(f64, usize)> = None;
        for &d in &donors {
            if !exact.is_empty() && cell_key(d) != key {
                continue;
            }
            let dist: f64 = (0..z.ncols()).map(|c| (z[(unit, c)] - z[(d, c)]).powi(2)).sum();
            if best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, d));
            }
        }
        let Some((dist, donor)) = best else {
            let cell: Vec<String> = exact
                .iter()
                .map(|&c| format!("{}={}", design.columns[c], design.x[(unit, c)]))
                .collect();
            return Err(Error::Support(format!("no donor units in exact-matching cell {{{}}}", cell.join(", "))));
        };
        matches.push(Match { unit, donor, distance: dist.sqrt() });
    }

    let y = ds.outcome();
    let w = ds.survey_weight();
    let mut reuse = vec![0.0; n];
    for m in &matches {
        reuse[m.donor] += w[m.unit];
    }
    let d: Vec<f64> = (0..n)
        .map(|i| if ind[i] == 1.0 { reuse[i] / w[i] * y[i] } else { -y[i] })
        .collect();
    let total: f64 = w.iter().sum();
    let psi = matches.iter().map(|m| w[m.unit] * (y[m.donor] - y[m.unit])).sum::<f64>() / total;
    let se = stats::weighted_mean_se(&d, w);
    let mut est = RieEstimate::wald(Method::Matching, iv, psi, se, alpha, share, n);
    est.flags.approximate_se = true;
    Ok((est, matches))
}

/// Rows of `x` mapped so Euclidean distance equals Mahalanobis distance under
/// the full-sample covariance (ridge-stabilized by `1e-8 * diag`).
/// Constant columns carry no distance information and are dropped.
fn mahalanobis_coordinates(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 {
        return Ok(DMatrix::zeros(x.nrows(), 0));
    }
    let (_, sds) = linalg::column_moments(x);
    let keep: Vec<usize> = (0..x.ncols()).filter(|&c| sds[c] > 0.0).collect();
    let x = x.select_columns(&keep);
    let mut cov = linalg::covariance(&x);
    for c in 0..cov.ncols() {
        cov[(c, c)] *= 1.0 + 1e-8;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("matching covariance is not positive definite".into()))?;
    let zt = chol
        .l()
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Numeric("matching covariance factor is singular".into()))?;
    Ok(zt.transpose())
}

/// Pool estimates from `M >= 2` multiply-imputed datasets (Rubin's rules).
///
/// `T = mean(se^2) + (1 + 1/M) * var(psi)`; the pooled standard error is
/// `sqrt(T)` with a normal-quantile interval.
pub fn combine_imputations(estimates: &[RieEstimate], alpha: f64) -> Result<RieEstimate> {
    check_alpha(alpha)?;
    let m = estimates.len();
    if m < 2 {
        return Err(Error::Usage(format!("pooling needs at least 2 imputations, got {m}")));
    }
    let first = &estimates[0];
    if let Some(other) = estimates.iter().find(|e| e.method != first.method || e.intervention != first.intervention) {
        return Err(Error::Usage(format!(
            "cannot pool {}/{} with {}/{}",
            first.method, first.intervention, other.method, other.intervention
        )));
    }
    let psis: Vec<f64> = estimates.iter().map(|e| e.psi).collect();
    let psi_bar = stats::mean(&psis);
    let within = estimates.iter().map(|e| e.se * e.se).sum::<f64>() / m as f64;
    let between = psis.iter().map(|p| (p - psi_bar).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let total = within + (1.0 + 1.0 / m as f64) * between;
    let se = total.sqrt();
    let half = stats::z_critical(alpha) * se;
    let flags = estimates.iter().fold(Flags::default(), |acc, e| acc.merge(&e.flags));
    Ok(RieEstimate {
        method: first.method,
        intervention: first.intervention.clone(),
        psi: psi_bar,
        se,
        ci_low: psi_bar - half,
        ci_high: psi_bar + half,
        alpha,
        binding_share: estimates.iter().map(|e| e.binding_share).sum::<f64>() / m as f64,
        n: first.n,
        flags: Flags { imputations: Some(m), ..flags },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InterventionKind;
    use proptest::prelude::*;

    fn ds(y: &[f64], a: &[f64], w: &[f64], weights: Option<Vec<f64>>) -> Dataset {
        let n = y.len();
        Dataset::new(
            vec!["w".into()],
            DMatrix::from_column_slice(n, 1, w),
            vec!["a".into()],
            DMatrix::from_column_slice(n, 1, a),
            y.to_vec(),
            weights,
        )
        .unwrap()
    }

    fn set0() -> Intervention {
        Intervention::new("set0", 0, InterventionKind::SetBinary, 0.0)
    }

    #[test]
    fn four_row_fixture_literal_form() {
        // ind = (1,1,0,0) for the set-to-0 intervention.
        let d = ds(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0], &[0.0; 4], None);
        let ghat = [0.5, 0.25, 0.5, 0.5];
        let (est, infl) =
            rie_ipw_with(&d, &set0(), &ghat, 0.05, IpwWeighting::HorvitzThompson, Method::EnsembleIpw).unwrap();
        assert_eq!(est.psi, 0.0);
        assert_eq!(infl.d, vec![1.0, 6.0, -3.0, -4.0]);
    }

    #[test]
    fn four_row_fixture_normalized_form() {
        let d = ds(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 1.0], &[0.0; 4], None);
        let ghat = [0.5, 0.25, 0.5, 0.5];
        // Weights 1/ghat on the non-intervened rows are (2, 4):
        // (2*1 + 4*2) / 6 - 2.5 = -5/6.
        let (est, infl) = rie_ipw(&d, &set0(), &ghat, 0.05).unwrap();
        assert!((est.psi + 5.0 / 6.0).abs() < 1e-15);
        assert!((stats::mean(&infl.d) - est.psi).abs() < 1e-15);
    }

    #[test]
    fn constant_true_share_recovers_subgroup_mean_difference() {
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0];
        let a = [0.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let d = ds(&y, &a, &[0.0; 6], None);
        let ghat = [0.5; 6];
        let expected = (3.0 + 4.0 + 1.0) / 3.0 - y.iter().sum::<f64>() / 6.0;
        for weighting in [IpwWeighting::Hajek, IpwWeighting::HorvitzThompson] {
            let (est, _) = rie_ipw_with(&d, &set0(), &ghat, 0.05, weighting, Method::EnsembleIpw).unwrap();
            assert!((est.psi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn no_op_intervention_is_zero() {
        let d = ds(&[1.0, 2.0, 7.0], &[0.0; 3], &[0.0; 3], None);
        for weighting in [IpwWeighting::Hajek, IpwWeighting::HorvitzThompson] {
            let (est, infl) = rie_ipw_with(&d, &set0(), &[1.0; 3], 0.05, weighting, Method::EnsembleIpw).unwrap();
            assert_eq!(est.psi, 0.0);
            assert_eq!(est.se, 0.0);
            assert!(infl.d.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn propensity_outside_bounds_is_a_positivity_error() {
        let d = ds(&[1.0, 2.0], &[0.0, 1.0], &[0.0; 2], None);
        assert!(matches!(rie_ipw(&d, &set0(), &[0.0, 0.5], 0.05), Err(Error::Positivity(_))));
        assert!(matches!(rie_ipw(&d, &set0(), &[1.2, 0.5], 0.05), Err(Error::Positivity(_))));
        assert!(matches!(rie_ipw(&d, &set0(), &[0.5], 0.05), Err(Error::Invalid(_))));
    }

    #[test]
    fn ci_width_matches_normal_quantile() {
        let d = ds(&[1.0, 2.0, 3.0, 5.0, 8.0], &[0.0, 1.0, 0.0, 1.0, 0.0], &[0.0; 5], None);
        let (est, _) = rie_ipw(&d, &set0(), &[0.6, 0.5, 0.4, 0.7, 0.55], 0.1).unwrap();
        assert!(est.ci_low <= est.psi && est.psi <= est.ci_high);
        let z = stats::z_critical(0.1);
        assert!((est.ci_high - est.ci_low - 2.0 * z * est.se).abs() < 1e-12);
    }

    #[test]
    fn ols_recovers_noiseless_linear_effect() {
        // Y = 2A + W exactly; setting A = 0 shifts the mean by -2 * share.
        let a = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let w = [0.3, -1.0, 2.0, 0.1, 0.7, -0.4, 1.1, 0.0];
        let y: Vec<f64> = a.iter().zip(&w).map(|(a, w)| 2.0 * a + w).collect();
        let d = ds(&y, &a, &w, None);
        let est = rie_ols(&d, &set0(), 0.05).unwrap();
        assert!((est.psi + 2.0 * 0.5).abs() < 1e-10, "{}", est.psi);
        assert!(est.se < 1e-6);

        let shifted = d.with_outcome(y.iter().map(|v| v + 100.0).collect()).unwrap();
        assert!((rie_ols(&shifted, &set0(), 0.05).unwrap().psi - est.psi).abs() < 1e-9);
    }

    #[test]
    fn ols_with_nothing_to_change_is_zero() {
        let d = ds(&[1.0, 5.0, 2.0], &[0.0; 3], &[1.0, 2.0, 3.0], None);
        let est = rie_ols(&d, &set0(), 0.05).unwrap();
        assert_eq!((est.psi, est.se, est.binding_share), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ols_rank_deficiency_is_reported() {
        let a = [1.0, 0.0, 1.0, 0.0, 1.0];
        let d = ds(&[1.0, 2.0, 3.0, 4.0, 5.0], &a, &a, None);
        assert!(matches!(rie_ols(&d, &set0(), 0.05), Err(Error::Numeric(_))));
    }

    #[test]
    fn floor_intervention_uses_counterfactual_shift() {
        // Y = 3A + W; floor at 2 raises A from (0, 1) to 2 for two units.
        let a = [0.0, 1.0, 2.0, 3.0, 4.0, 2.5];
        let w = [1.0, 0.0, -1.0, 0.5, 0.2, -0.3];
        let y: Vec<f64> = a.iter().zip(&w).map(|(a, w)| 3.0 * a + w).collect();
        let d = ds(&y, &a, &w, None);
        let iv = Intervention::new("floor2", 0, InterventionKind::Floor, 2.0);
        let est = rie_ols(&d, &iv, 0.05).unwrap();
        assert!((est.psi - 3.0 * (2.0 + 1.0) / 6.0).abs() < 1e-10);
    }

    #[test]
    fn matching_six_unit_hand_computation() {
        // One covariate; Mahalanobis distance on one column is |dx| / sd,
        // so nearest neighbours are nearest in w.
        let w = [0.0, 1.0, 2.0, 0.2, 1.9, 5.0];
        let a = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0];
        let y = [10.0, 3.0, 6.0, 1.0, 20.0, 30.0];
        let d = ds(&y, &a, &w, None);
        let (est, matches) = rie_matching_detail(&d, &set0(), 0.05, None).unwrap();
        // Binding units: 0 (w=0 -> donor 3 at 0.2), 4 (w=1.9 -> donor 2 at 2.0),
        // 5 (w=5 -> donor 2 at 2.0).
        let donors: Vec<(usize, usize)> = matches.iter().map(|m| (m.unit, m.donor)).collect();
        assert_eq!(donors, vec![(0, 3), (4, 2), (5, 2)]);
        let expected = ((1.0 - 10.0) + (6.0 - 20.0) + (6.0 - 30.0)) / 6.0;
        assert!((est.psi - expected).abs() < 1e-12);
        assert!(est.flags.approximate_se);
    }

    #[test]
    fn matching_prefers_exact_duplicates_and_lowest_index_ties() {
        let w = [1.0, 3.0, 1.0, 2.0, 4.0];
        let a = [1.0, 0.0, 0.0, 0.0, 0.0];
        let d = ds(&[0.0, 1.0, 2.0, 3.0, 4.0], &a, &w, None);
        let (_, matches) = rie_matching_detail(&d, &set0(), 0.05, None).unwrap();
        assert_eq!(matches[0].donor, 2);
        assert_eq!(matches[0].distance, 0.0);

        // Rows 1 and 3 are identical donors: the lower index wins.
        let d = ds(&[0.0, 1.0, 2.0, 3.0], &[1.0, 0.0, 1.0, 0.0], &[2.0, 1.0, 9.0, 1.0], None);
        let (_, matches) = rie_matching_detail(&d, &set0(), 0.05, None).unwrap();
        assert_eq!(matches[0].donor, 1);
    }

    #[test]
    fn matching_with_nothing_to_impute_is_zero() {
        let d = ds(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 1.0], None);
        assert_eq!(rie_matching(&d, &set0(), 0.05, None).unwrap().psi, 0.0);
    }

    #[test]
    fn matching_reports_empty_exact_cells() {
        let n = 4;
        let mut cov = DMatrix::zeros(n, 2);
        cov.column_mut(0).copy_from_slice(&[0.1, 0.2, 0.3, 0.4]);
        cov.column_mut(1).copy_from_slice(&[0.0, 0.0, 1.0, 1.0]);
        let d = Dataset::new(
            vec!["x".into(), "muni".into()],
            cov,
            vec!["a".into()],
            DMatrix::from_column_slice(n, 1, &[1.0, 0.0, 1.0, 1.0]),
            vec![1.0, 2.0, 3.0, 4.0],
            None,
        )
        .unwrap();
        let err = rie_matching(&d, &set0(), 0.05, Some(&["muni"])).unwrap_err();
        assert!(matches!(err, Error::Support(ref m) if m.contains("muni=1")), "{err}");
        assert!(rie_matching(&d, &set0(), 0.05, None).is_ok());
        assert!(matches!(rie_matching(&d, &set0(), 0.05, Some(&["nope"])), Err(Error::Schema(_))));
    }

    #[test]
    fn rubin_worked_example() {
        let make = |psi: f64| RieEstimate {
            method: Method::EnsembleIpw,
            intervention: "iv".into(),
            psi,
            se: 1.0,
            ci_low: psi - 1.96,
            ci_high: psi + 1.96,
            alpha: 0.05,
            binding_share: 0.3,
            n: 100,
            flags: Flags::default(),
        };
        let pooled = combine_imputations(&[make(1.0), make(2.0), make(3.0)], 0.05).unwrap();
        assert!((pooled.psi - 2.0).abs() < 1e-15);
        assert!((pooled.se * pooled.se - 7.0 / 3.0).abs() < 1e-12);
        assert!((pooled.se - 1.5275).abs() < 1e-4);
        assert_eq!(pooled.flags.imputations, Some(3));

        let same = combine_imputations(&[make(2.0), make(2.0)], 0.05).unwrap();
        assert_eq!((same.psi, same.se), (2.0, 1.0));

        assert!(matches!(combine_imputations(&[make(1.0)], 0.05), Err(Error::Usage(_))));
        let mut other = make(1.0);
        other.method = Method::Ols;
        assert!(matches!(combine_imputations(&[make(1.0), other], 0.05), Err(Error::Usage(_))));
    }

    #[test]
    fn flags_round_trip_through_text() {
        let f = Flags { degenerate_fit: true, approximate_se: true, imputations: Some(5) };
        assert_eq!(f.to_string().parse::<Flags>().unwrap(), f);
        assert_eq!("".parse::<Flags>().unwrap(), Flags::default());
    }

    fn random_case(seed: u64, n: usize) -> (Dataset, Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let a: Vec<f64> = w.iter().map(|wi| f64::from(rng.random::<f64>() < linalg::sigmoid(*wi))).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * a[i] + w[i] + rng.random::<f64>()).collect();
        let weights: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
        let ghat: Vec<f64> = w.iter().map(|wi| 1.0 - linalg::sigmoid(*wi)).map(|g| g.clamp(0.05, 0.95)).collect();
        (ds(&y, &a, &w, Some(weights)), ghat)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn influence_mean_equals_estimate(seed in any::<u64>()) {
            let (d, ghat) = random_case(seed, 40);
            for weighting in [IpwWeighting::Hajek, IpwWeighting::HorvitzThompson] {
                let (est, infl) = rie_ipw_with(&d, &set0(), &ghat, 0.05, weighting, Method::EnsembleIpw).unwrap();
                let m = stats::weighted_mean(&infl.d, d.survey_weight());
                prop_assert!((m - est.psi).abs() < 1e-10);
            }
        }

        #[test]
        fn estimates_are_invariant_to_weight_scale(seed in any::<u64>(), scale in 0.01f64..50.0) {
            let (d, ghat) = random_case(seed, 40);
            let scaled = d.with_survey_weight(d.survey_weight().iter().map(|w| w * scale).collect()).unwrap();
            let pairs = [
                (rie_ipw(&d, &set0(), &ghat, 0.05).unwrap().0, rie_ipw(&scaled, &set0(), &ghat, 0.05).unwrap().0),
                (rie_ols(&d, &set0(), 0.05).unwrap(), rie_ols(&scaled, &set0(), 0.05).unwrap()),
                (rie_matching(&d, &set0(), 0.05, None).unwrap(), rie_matching(&scaled, &set0(), 0.05, None).unwrap()),
                (rie_naive_ipw(&d, &set0(), 0.05, 1).unwrap(), rie_naive_ipw(&scaled, &set0(), 0.05, 1).unwrap()),
            ];
            for (a, b) in pairs {
                prop_assert!((a.psi - b.psi).abs() < 1e-9 * (1.0 + a.psi.abs()));
                prop_assert!((a.se - b.se).abs() < 1e-9 * (1.0 + a.se));
                prop_assert!((a.ci_low - b.ci_low).abs() < 1e-8 && (a.ci_high - b.ci_high).abs() < 1e-8);
            }
        }

        #[test]
        fn estimates_are_invariant_to_outcome_shift(seed in any::<u64>(), k in -100.0f64..100.0) {
            let (d, ghat) = random_case(seed, 40);
            let shifted = d.with_outcome(d.outcome().iter().map(|y| y + k).collect()).unwrap();
            let pairs = [
                (rie_ipw(&d, &set0(), &ghat, 0.05).unwrap().0, rie_ipw(&shifted, &set0(), &ghat, 0.05).unwrap().0),
                (rie_ols(&d, &set0(), 0.05).unwrap(), rie_ols(&shifted, &set0(), 0.05).unwrap()),
                (rie_matching(&d, &set0(), 0.05, None).unwrap(), rie_matching(&shifted, &set0(), 0.05, None).unwrap()),
                (rie_naive_ipw(&d, &set0(), 0.05, 1).unwrap(), rie_naive_ipw(&shifted, &set0(), 0.05, 1).unwrap()),
            ];
            for (a, b) in pairs {
                prop_assert!((a.psi - b.psi).abs() < 1e-9 * (1.0 + k.abs()), "{} {} {}", a.method, a.psi, b.psi);
            }
        }

        #[test]
        fn pooled_se_is_at_least_mean_within(psis in proptest::collection::vec(-5.0f64..5.0, 2..8)) {
            let ests: Vec<RieEstimate> = psis.iter().enumerate().map(|(i, &p)| RieEstimate {
                method: Method::Ols, intervention: "x".into(), psi: p, se: 0.5 + i as f64 * 0.1,
                ci_low: 0.0, ci_high: 0.0, alpha: 0.05, binding_share: 0.5, n: 10, flags: Flags::default(),
            }).collect();
            let pooled = combine_imputations(&ests, 0.05).unwrap();
            let within = ests.iter().map(|e| e.se * e.se).sum::<f64>() / ests.len() as f64;
            prop_assert!(pooled.se >= within.sqrt() - 1e-15);
        }
    }
}
