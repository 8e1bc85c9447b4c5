//! Balance placebo checks, positivity reports and propensity histograms.

use std::fmt;

use crate::dataset::{self, Dataset, Intervention};
use crate::error::{Error, Result};
use crate::estimators::{self, IpwWeighting, Method};
use crate::stats;

/// Pseudo-RIE of one covariate, in units of its full-sample SD.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    pub covariate: String,
    pub smd: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub adjusted: bool,
}

impl BalanceRow {
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
    /// Covariates with zero variance, which have no SD to normalize by.
    pub skipped: Vec<String>,
}

impl BalanceTable {
    pub fn unadjusted(&self) -> impl Iterator<Item = &BalanceRow> {
        self.rows.iter().filter(|r| !r.adjusted)
    }

    pub fn adjusted(&self) -> impl Iterator<Item = &BalanceRow> {
        self.rows.iter().filter(|r| r.adjusted)
    }

    pub fn row(&self, covariate: &str, adjusted: bool) -> Option<&BalanceRow> {
        self.rows.iter().find(|r| r.covariate == covariate && r.adjusted == adjusted)
    }
}

/// Treat each covariate as an outcome and estimate its "effect" under the
/// intervention. Unadjusted rows compare the non-intervened subgroup mean
/// with the population mean; adjusted rows reweight by `ghat`. Balanced
/// covariates have pseudo-effects near zero.
pub fn balance_table(ds: &Dataset, iv: &Intervention, ghat: Option<&[f64]>, alpha: f64) -> Result<BalanceTable> {
    iv.validate(ds)?;
    let w = ds.survey_weight();
    let flat = vec![1.0; ds.n()];
    let mut table = BalanceTable::default();
    for name in ds.covariate_names() {
        let x = ds.covariate(name).expect("covariate listed by name");
        let sd = stats::weighted_variance(&x, w).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            table.skipped.push(name.clone());
            continue;
        }
        let pseudo = ds.with_outcome(x)?;
        let mut versions = vec![(false, flat.as_slice())];
        if let Some(g) = ghat {
            versions.push((true, g));
        }
        for (adjusted, g) in versions {
            let (est, _) =
                estimators::rie_ipw_with(&pseudo, iv, g, alpha, IpwWeighting::Hajek, Method::EnsembleIpw)?;
            table.rows.push(BalanceRow {
                covariate: name.clone(),
                smd: est.psi / sd,
                se: est.se / sd,
                ci_low: est.ci_low / sd,
                ci_high: est.ci_high / sd,
                adjusted,
            });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub floor: f64,
    /// Number of non-intervened units inspected.
    pub considered: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// `(row, ghat)` for inspected units with `ghat < floor`.
    pub violations: Vec<(usize, f64)>,
}

impl PositivityReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for PositivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
        writeln!(f, "floor: {}", self.floor)?;
        writeln!(f, "units_considered: {}", self.considered)?;
        writeln!(f, "min_pscore: {}", show(self.min))?;
        writeln!(f, "max_pscore: {}", show(self.max))?;
        writeln!(f, "violations: {}", self.violations.len())?;
        for (row, g) in &self.violations {
            writeln!(f, "  row {row}: {g}")?;
        }
        writeln!(f, "status: {}", if self.pass() { "pass" } else { "fail" })
    }
}

/// Scan propensity scores of the non-intervened units against a floor `b`.
pub fn positivity_report(ghat: &[f64], indicator: &[f64], floor: f64) -> PositivityReport {
    let mut report = PositivityReport { floor, considered: 0, min: None, max: None, violations: Vec::new() };
    for (i, (&g, &ind)) in ghat.iter().zip(indicator).enumerate() {
        if ind != 1.0 {
            continue;
        }
        report.considered += 1;
        report.min = Some(report.min.map_or(g, |m: f64| m.min(g)));
        report.max = Some(report.max.map_or(g, |m: f64| m.max(g)));
        if g < floor {
            report.violations.push((i, g));
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram on `[0, 1]` of the propensity scores of the
/// non-intervened units (those that build the counterfactual). The last bin
/// is closed on the right.
pub fn pscore_histogram(ghat: &[f64], indicator: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0usize; bins];
    for (&g, &ind) in ghat.iter().zip(indicator) {
        if ind == 1.0 {
            let b = ((g.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

/// Convenience: indicator for `iv` then [`positivity_report`].
pub fn positivity_for(ds: &Dataset, iv: &Intervention, ghat: &[f64], floor: f64) -> PositivityReport {
    positivity_report(ghat, &dataset::nonintervened_indicator(ds, iv), floor)
}
