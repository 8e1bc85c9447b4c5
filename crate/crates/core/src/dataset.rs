//! Data model, CSV ingestion, intervention rules and covariate preprocessing.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Maps CSV header names onto the roles they play in the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub outcome: String,
    pub treatments: Vec<String>,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub survey_weight: Option<String>,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub stratum: Option<String>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() {
            return Err(Error::Schema("schema must name an outcome column".into()));
        }
        if self.treatments.is_empty() {
            return Err(Error::Schema("schema must name at least one treatment column".into()));
        }
        if self.covariates.is_empty() {
            return Err(Error::Schema("schema must name at least one covariate column".into()));
        }
        let mut seen = HashMap::new();
        let roles = std::iter::once(&self.outcome)
            .chain(&self.treatments)
            .chain(&self.covariates)
            .chain(self.survey_weight.iter());
        for name in roles {
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("column '{name}' is assigned more than one role")));
            }
        }
        Ok(())
    }
}

/// Observational micro data `O = (W, A, Y)` with survey design information.
///
/// Immutable once constructed; every constructor checks that all columns have
/// the same length, values are finite and survey weights are positive.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
    treatment_names: Vec<String>,
    treatments: DMatrix<f64>,
    outcome: Vec<f64>,
    survey_weight: Vec<f64>,
    cluster_id: Option<Vec<String>>,
    stratum_id: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
        treatment_names: Vec<String>,
        treatments: DMatrix<f64>,
        outcome: Vec<f64>,
        survey_weight: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::Invalid("dataset must contain at least one row".into()));
        }
        if covariates.nrows() != n || treatments.nrows() != n {
            return Err(Error::Invalid(format!(
                "column lengths differ: outcome {n}, covariates {}, treatments {}",
                covariates.nrows(),
                treatments.nrows()
            )));
        }
        if covariate_names.len() != covariates.ncols() || treatment_names.len() != treatments.ncols() {
            return Err(Error::Invalid("column names do not match matrix widths".into()));
        }
        if treatments.ncols() == 0 {
            return Err(Error::Invalid("dataset needs at least one treatment column".into()));
        }
        if !linalg::all_finite(&covariates) || !linalg::all_finite(&treatments) {
            return Err(Error::Invalid("covariates and treatments must be finite".into()));
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("outcome is not finite at row {i}")));
        }
        let survey_weight = survey_weight.unwrap_or_else(|| vec![1.0; n]);
        if survey_weight.len() != n {
            return Err(Error::Invalid("survey weight length differs from outcome".into()));
        }
        if let Some(i) = survey_weight.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Invalid(format!("survey weight must be positive (row {i})")));
        }
        Ok(Self {
            covariate_names,
            covariates,
            treatment_names,
            treatments,
            outcome,
            survey_weight,
            cluster_id: None,
            stratum_id: None,
        })
    }

    /// Attach cluster and stratum labels (recorded, not yet used for variance).
    pub fn with_design_labels(
        mut self,
        cluster_id: Option<Vec<String>>,
        stratum_id: Option<Vec<String>>,
    ) -> Result<Self> {
        for labels in cluster_id.iter().chain(stratum_id.iter()) {
            if labels.len() != self.n() {
                return Err(Error::Invalid("design label length differs from outcome".into()));
            }
        }
        self.cluster_id = cluster_id;
        self.stratum_id = stratum_id;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatments(&self) -> &DMatrix<f64> {
        &self.treatments
    }

    pub fn treatment_names(&self) -> &[String] {
        &self.treatment_names
    }

    pub fn treatment(&self, j: usize) -> Vec<f64> {
        self.treatments.column(j).iter().copied().collect()
    }

    pub fn covariate(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.covariate_names.iter().position(|c| c == name)?;
        Some(self.covariates.column(k).iter().copied().collect())
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn survey_weight(&self) -> &[f64] {
        &self.survey_weight
    }

    pub fn cluster_id(&self) -> Option<&[String]> {
        self.cluster_id.as_deref()
    }

    pub fn stratum_id(&self) -> Option<&[String]> {
        self.stratum_id.as_deref()
    }

    pub fn treatment_index(&self, name: &str) -> Option<usize> {
        self.treatment_names.iter().position(|t| t == name)
    }

    /// Copy with a different outcome vector (used for pseudo-outcome balance checks).
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(Error::Invalid("replacement outcome has the wrong length".into()));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("replacement outcome must be finite".into()));
        }
        let mut out = self.clone();
        out.outcome = outcome;
        Ok(out)
    }

    /// Copy with different survey weights.
    pub fn with_survey_weight(&self, weight: Vec<f64>) -> Result<Self> {
        let labels = (self.cluster_id.clone(), self.stratum_id.clone());
        Self::new(
            self.covariate_names.clone(),
            self.covariates.clone(),
            self.treatment_names.clone(),
            self.treatments.clone(),
            self.outcome.clone(),
            Some(weight),
        )?
        .with_design_labels(labels.0, labels.1)
    }

    /// Copy with an extra covariate column appended (e.g. an ICW index).
    pub fn with_covariate(&self, name: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::Invalid(format!("covariate '{name}' has the wrong length")));
        }
        if self.covariate_names.iter().any(|c| c == name) {
            return Err(Error::Invalid(format!("covariate '{name}' already exists")));
        }
        let p = self.n_covariates();
        let mut covariates = self.covariates.clone().insert_column(p, 0.0);
        covariates.column_mut(p).copy_from_slice(values);
        let mut names = self.covariate_names.clone();
        names.push(name.to_string());
        let mut out = self.clone();
        out.covariates = covariates;
        out.covariate_names = names;
        if !linalg::all_finite(&out.covariates) {
            return Err(Error::Invalid(format!("covariate '{name}' must be finite")));
        }
        Ok(out)
    }
}

/// Load a CSV file (header row, decimal-point numerics) under `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    read_csv(reader, schema)
}

/// Same as [`load_csv`] but from an in-memory reader.
pub fn read_csv_from<R: std::io::Read>(input: R, schema: &Schema) -> Result<Dataset> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    read_csv(reader, schema)
}

fn read_csv<R: std::io::Read>(mut reader: csv::Reader<R>, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let headers = reader.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in CSV header")))
    };
    let outcome_col = index_of(&schema.outcome)?;
    let treatment_cols = schema.treatments.iter().map(|t| index_of(t)).collect::<Result<Vec<_>>>()?;
    let covariate_cols = schema.covariates.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;
    let weight_col = schema.survey_weight.as_deref().map(index_of).transpose()?;
    let cluster_col = schema.cluster.as_deref().map(index_of).transpose()?;
    let stratum_col = schema.stratum.as_deref().map(index_of).transpose()?;

    let mut outcome = Vec::new();
    let mut treatments: Vec<f64> = Vec::new();
    let mut covariates: Vec<f64> = Vec::new();
    let mut weights = Vec::new();
    let mut clusters = Vec::new();
    let mut strata = Vec::new();

    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let cell = |col: usize| -> Result<f64> {
            let name = headers.get(col).unwrap_or_default();
            let raw = record.get(col).unwrap_or("");
            parse_cell(raw).map_err(|message| Error::Data { row, column: name.to_string(), message })
        };
        outcome.push(cell(outcome_col)?);
        for &c in &treatment_cols {
            treatments.push(cell(c)?);
        }
        for &c in &covariate_cols {
            covariates.push(cell(c)?);
        }
        if let Some(c) = weight_col {
            let w = cell(c)?;
            if w <= 0.0 {
                return Err(Error::Data {
                    row,
                    column: headers[c].to_string(),
                    message: format!("survey weight must be positive, got {w}"),
                });
            }
            weights.push(w);
        }
        for (col, labels) in [(cluster_col, &mut clusters), (stratum_col, &mut strata)] {
            if let Some(c) = col {
                let raw = record.get(c).unwrap_or("");
                if raw.is_empty() {
                    return Err(Error::Data {
                        row,
                        column: headers[c].to_string(),
                        message: "missing value".into(),
                    });
                }
                labels.push(raw.to_string());
            }
        }
    }

    let n = outcome.len();
    if n == 0 {
        return Err(Error::Data { row: 0, column: schema.outcome.clone(), message: "no data rows".into() });
    }
    let treatments = DMatrix::from_row_slice(n, treatment_cols.len(), &treatments);
    let covariates = DMatrix::from_row_slice(n, covariate_cols.len(), &covariates);
    let ds = Dataset::new(
        schema.covariates.clone(),
        covariates,
        schema.treatments.clone(),
        treatments,
        outcome,
        weight_col.map(|_| weights),
    )?;
    ds.with_design_labels(cluster_col.map(|_| clusters), stratum_col.map(|_| strata))
}

fn parse_cell(raw: &str) -> std::result::Result<f64, String> {
    if raw.is_empty() {
        return Err("missing value".into());
    }
    let v: f64 = raw.parse().map_err(|_| format!("not a number: '{raw}'"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value: '{raw}'"));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// Set a binary treatment to 0 or 1 for everyone.
    SetBinary,
    /// Raise every value below the target up to the target.
    Floor,
    /// Set a (possibly non-binary) treatment to a fixed value.
    #[serde(alias = "fixed_value")]
    Fixed,
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterventionKind::SetBinary => "set_binary",
            InterventionKind::Floor => "floor",
            InterventionKind::Fixed => "fixed",
        })
    }
}

/// A hypothetical population intervention on one treatment column.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub name: String,
    pub treatment_index: usize,
    pub kind: InterventionKind,
    pub target: f64,
}

impl Intervention {
    pub fn new(name: impl Into<String>, treatment_index: usize, kind: InterventionKind, target: f64) -> Self {
        Self { name: name.into(), treatment_index, kind, target }
    }

    /// Check the rule against a dataset: index in range, finite target and,
    /// for `set_binary`, a 0/1 target on a 0/1 column.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.treatment_index >= ds.n_treatments() {
            return Err(Error::Parameter(format!(
                "intervention '{}' refers to treatment {} but the dataset has {}",
                self.name,
                self.treatment_index,
                ds.n_treatments()
            )));
        }
        if !self.target.is_finite() {
            return Err(Error::Parameter(format!("intervention '{}' has a non-finite target", self.name)));
        }
        if self.kind == InterventionKind::SetBinary {
            if self.target != 0.0 && self.target != 1.0 {
                return Err(Error::Parameter(format!(
                    "set_binary intervention '{}' needs target 0 or 1, got {}",
                    self.name, self.target
                )));
            }
            let col = ds.treatments().column(self.treatment_index);
            if col.iter().any(|&a| a != 0.0 && a != 1.0) {
                return Err(Error::Parameter(format!(
                    "set_binary intervention '{}' applied to non-binary column '{}'",
                    self.name,
                    ds.treatment_names()[self.treatment_index]
                )));
            }
        }
        Ok(())
    }

    /// Value unit `i`'s treatment would take under the intervention.
    pub fn counterfactual_value(&self, observed: f64) -> f64 {
        match self.kind {
            InterventionKind::SetBinary | InterventionKind::Fixed => self.target,
            InterventionKind::Floor => observed.max(self.target),
        }
    }

    /// True when the intervention leaves this observed value unchanged.
    pub fn leaves_unchanged(&self, observed: f64) -> bool {
        match self.kind {
            InterventionKind::SetBinary | InterventionKind::Fixed => observed == self.target,
            InterventionKind::Floor => observed >= self.target,
        }
    }
}

/// One entry of an intervention config file; `treatment` is a column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub treatment: String,
    pub kind: InterventionKind,
    pub target: f64,
}

impl InterventionConfig {
    pub fn resolve(&self, ds: &Dataset) -> Result<Intervention> {
        let j = ds.treatment_index(&self.treatment).ok_or_else(|| {
            Error::Schema(format!("intervention treatment '{}' is not a treatment column", self.treatment))
        })?;
        let name = self
            .name
            .clone()
            .unwrap_or_else(|| format!("{}_{}_{}", self.treatment, self.kind, self.target));
        let iv = Intervention::new(name, j, self.kind, self.target);
        iv.validate(ds)?;
        Ok(iv)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterventionFile {
    intervention: Vec<InterventionConfig>,
}

/// Parse an intervention config file:
///
/// ```toml
/// [[intervention]]
/// name = "no_exposure"   # optional
/// treatment = "a1"
/// kind = "set_binary"    # set_binary | floor | fixed
/// target = 0
/// ```
pub fn parse_interventions(text: &str) -> Result<Vec<InterventionConfig>> {
    let file: InterventionFile = toml::from_str(text)?;
    if file.intervention.is_empty() {
        return Err(Error::Schema("intervention file lists no interventions".into()));
    }
    Ok(file.intervention)
}

/// `I(A_ji = a_j)`: 1 for units the intervention leaves unchanged, else 0.
pub fn nonintervened_indicator(ds: &Dataset, iv: &Intervention) -> Vec<f64> {
    ds.treatments()
        .column(iv.treatment_index)
        .iter()
        .map(|&a| if iv.leaves_unchanged(a) { 1.0 } else { 0.0 })
        .collect()
}

/// Units whose treatment the intervention would change (indicator = 0).
pub fn binding_mask(ds: &Dataset, iv: &Intervention) -> Vec<bool> {
    ds.treatments()
        .column(iv.treatment_index)
        .iter()
        .map(|&a| !iv.leaves_unchanged(a))
        .collect()
}

/// Survey-weighted share of units the intervention binds on.
pub fn binding_share(ds: &Dataset, iv: &Intervention) -> f64 {
    let w = ds.survey_weight();
    let total: f64 = w.iter().sum();
    let bound: f64 = binding_mask(ds, iv)
        .iter()
        .zip(w)
        .filter(|(b, _)| **b)
        .map(|(_, wi)| wi)
        .sum();
    bound / total
}

/// Weights given to each standardized component of an inverse-covariance
/// weighted index, normalized to sum to one.
pub fn icw_weights(ds: &Dataset, columns: &[&str]) -> Result<Vec<f64>> {
    let z = standardized_columns(ds, columns)?;
    let cov = linalg::covariance(&z);
    if linalg::inverse_condition(&cov) < 1e-12 {
        return Err(Error::Numeric(format!(
            "covariance of index components {{{}}} is singular",
            columns.join(", ")
        )));
    }
    let inv = cov
        .try_inverse()
        .ok_or_else(|| Error::Numeric(format!("cannot invert covariance of {{{}}}", columns.join(", "))))?;
    let row_sums: Vec<f64> = inv.row_iter().map(|r| r.sum()).collect();
    let total: f64 = row_sums.iter().sum();
    if total.abs() < 1e-12 {
        return Err(Error::Numeric(format!(
            "inverse-covariance weights of {{{}}} sum to zero",
            columns.join(", ")
        )));
    }
    Ok(row_sums.iter().map(|w| w / total).collect())
}

/// Inverse-covariance weighted index of the named covariates, standardized
/// to mean 0 and SD 1.
///
/// Components are standardized before weighting.
pub fn icw_index(ds: &Dataset, columns: &[&str]) -> Result<Vec<f64>> {
    let z = standardized_columns(ds, columns)?;
    let weights = icw_weights(ds, columns)?;
    let raw = &z * DVector::from_vec(weights);
    let m = raw.mean();
    let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (raw.len() as f64 - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Numeric(format!("index over {{{}}} has zero variance", columns.join(", "))));
    }
    Ok(raw.iter().map(|v| (v - m) / sd).collect())
}

fn standardized_columns(ds: &Dataset, columns: &[&str]) -> Result<DMatrix<f64>> {
    if columns.is_empty() {
        return Err(Error::Parameter("an index needs at least one column".into()));
    }
    if ds.n() < 2 {
        return Err(Error::Numeric("an index needs at least two rows".into()));
    }
    let mut z = DMatrix::zeros(ds.n(), columns.len());
    for (k, name) in columns.iter().enumerate() {
        let col = ds
            .covariate(name)
            .ok_or_else(|| Error::Schema(format!("index column '{name}' is not a covariate")))?;
        z.column_mut(k).copy_from_slice(&col);
    }
    let (means, sds) = linalg::column_moments(&z);
    if let Some(k) = sds.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Numeric(format!("index column '{}' has zero variance", columns[k])));
    }
    Ok(linalg::standardize_with(&z, &means, &sds))
}

/// Conditioning design `(W, A_-j)` for propensity models of treatment `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub columns: Vec<String>,
}

/// Covariates in schema order followed by every treatment except `j`, in
/// index order.
pub fn design_matrix(ds: &Dataset, j: usize) -> DesignMatrix {
    let n = ds.n();
    let p = ds.n_covariates();
    let others: Vec<usize> = (0..ds.n_treatments()).filter(|&k| k != j).collect();
    let mut x = DMatrix::zeros(n, p + others.len());
    x.view_mut((0, 0), (n, p)).copy_from(ds.covariates());
    let mut columns = ds.covariate_names().to_vec();
    for (offset, &k) in others.iter().enumerate() {
        x.column_mut(p + offset).copy_from(&ds.treatments().column(k));
        columns.push(ds.treatment_names()[k].clone());
    }
    DesignMatrix { x, columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn schema(weight: Option<&str>) -> Schema {
        Schema {
            outcome: "y".into(),
            treatments: vec!["a1".into()],
            covariates: vec!["w1".into()],
            survey_weight: weight.map(String::from),
            cluster: None,
            stratum: None,
        }
    }

    fn toy(a: &[f64], weights: Option<Vec<f64>>) -> Dataset {
        let n = a.len();
        Dataset::new(
            vec!["w1".into()],
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            vec!["a1".into()],
            DMatrix::from_column_slice(n, 1, a),
            vec![0.0; n],
            weights,
        )
        .unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let csv = "y,a1,w1\n1.5,0,0.1\n2.0,1,0.2\n-3,1,0.3\n";
        let ds = read_csv_from(csv.as_bytes(), &schema(None)).unwrap();
        assert_eq!((ds.n(), ds.n_treatments(), ds.n_covariates()), (3, 1, 1));
        assert_eq!(ds.outcome(), &[1.5, 2.0, -3.0]);
        assert_eq!(ds.survey_weight(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn blank_cell_is_a_data_error_naming_the_row() {
        let csv = "y,a1,w1\n1,0,0.1\n2,1,\n";
        match read_csv_from(csv.as_bytes(), &schema(None)) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "w1");
            }
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_rejected() {
        let csv = "y,a1,w1\n1,zero,0.1\n";
        assert!(matches!(read_csv_from(csv.as_bytes(), &schema(None)), Err(Error::Data { row: 1, .. })));
    }

    #[test]
    fn survey_weight_passes_through() {
        let csv = "y,a1,w1,wt\n1,0,0.1,0.5\n2,1,0.2,1.0\n3,1,0.3,2.0\n";
        let ds = read_csv_from(csv.as_bytes(), &schema(Some("wt"))).unwrap();
        assert_eq!(ds.survey_weight(), &[0.5, 1.0, 2.0]);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let csv = "y,a1\n1,0\n";
        let err = read_csv_from(csv.as_bytes(), &schema(None)).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("w1")), "{err}");
    }

    #[test]
    fn indicator_for_each_kind() {
        let ds = toy(&[0.0, 1.0, 1.0], None);
        let set0 = Intervention::new("s", 0, InterventionKind::SetBinary, 0.0);
        assert_eq!(nonintervened_indicator(&ds, &set0), vec![1.0, 0.0, 0.0]);

        let ds = toy(&[3.0, 7.0, 10.0], None);
        let floor = Intervention::new("f", 0, InterventionKind::Floor, 5.0);
        assert_eq!(nonintervened_indicator(&ds, &floor), vec![0.0, 1.0, 1.0]);

        let ds = toy(&[2.0, 2.0, 2.0], None);
        let fixed = Intervention::new("x", 0, InterventionKind::Fixed, 2.0);
        assert_eq!(nonintervened_indicator(&ds, &fixed), vec![1.0; 3]);
        assert_eq!(binding_share(&ds, &fixed), 0.0);
    }

    #[test]
    fn floor_at_the_threshold_is_unchanged() {
        let ds = toy(&[5.0, 4.999], None);
        let floor = Intervention::new("f", 0, InterventionKind::Floor, 5.0);
        assert_eq!(nonintervened_indicator(&ds, &floor), vec![1.0, 0.0]);
    }

    #[test]
    fn binding_share_examples() {
        let ds = toy(&[0.0, 1.0, 1.0], None);
        let set0 = Intervention::new("s", 0, InterventionKind::SetBinary, 0.0);
        assert!((binding_share(&ds, &set0) - 2.0 / 3.0).abs() < 1e-15);

        let ds = toy(&[1.0, 0.0, 0.0], Some(vec![1.0, 1.0, 2.0]));
        assert!((binding_share(&ds, &set0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn set_binary_rejects_non_binary_columns() {
        let ds = toy(&[0.0, 2.0], None);
        let iv = Intervention::new("s", 0, InterventionKind::SetBinary, 0.0);
        assert!(iv.validate(&ds).is_err());
        let iv = Intervention::new("s", 0, InterventionKind::SetBinary, 0.5);
        assert!(iv.validate(&toy(&[0.0, 1.0], None)).is_err());
        let iv = Intervention::new("s", 3, InterventionKind::Floor, 0.5);
        assert!(iv.validate(&ds).is_err());
    }

    #[test]
    fn intervention_file_round_trip() {
        let text = r#"
            [[intervention]]
            treatment = "a1"
            kind = "set_binary"
            target = 0

            [[intervention]]
            name = "income_floor"
            treatment = "a1"
            kind = "floor"
            target = 0.5
        "#;
        let cfgs = parse_interventions(text).unwrap();
        assert_eq!(cfgs.len(), 2);
        let ds = toy(&[0.0, 1.0], None);
        let iv = cfgs[1].resolve(&ds).unwrap();
        assert_eq!((iv.name.as_str(), iv.kind, iv.target), ("income_floor", InterventionKind::Floor, 0.5));
        assert_eq!(cfgs[0].resolve(&ds).unwrap().name, "a1_set_binary_0");
        assert!(parse_interventions("[[intervention]]\ntreatment='a'\nkind='bogus'\ntarget=1\n").is_err());
    }

    fn two_cov(x1: Vec<f64>, x2: Vec<f64>) -> Dataset {
        let n = x1.len();
        let mut cov = DMatrix::zeros(n, 2);
        cov.column_mut(0).copy_from_slice(&x1);
        cov.column_mut(1).copy_from_slice(&x2);
        Dataset::new(
            vec!["x1".into(), "x2".into()],
            cov,
            vec!["a".into()],
            DMatrix::zeros(n, 1),
            vec![0.0; n],
            None,
        )
        .unwrap()
    }

    #[test]
    fn icw_single_column_is_standardized_column() {
        let x = vec![1.0, 4.0, 2.0, 8.0, 5.0];
        let ds = two_cov(x.clone(), vec![0.0, 1.0, 0.0, 1.0, 0.5]);
        let idx = icw_index(&ds, &["x1"]).unwrap();
        let m = crate::stats::mean(&x);
        let sd = crate::stats::sd(&x);
        for (a, b) in idx.iter().zip(&x) {
            assert!((a - (b - m) / sd).abs() < 1e-12);
        }
    }

    #[test]
    fn icw_identical_columns_are_singular() {
        let x = vec![1.0, 4.0, 2.0, 8.0];
        let ds = two_cov(x.clone(), x);
        let err = icw_index(&ds, &["x1", "x2"]).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("x1") && m.contains("x2")));
    }

    #[test]
    fn icw_weights_match_closed_form_two_by_two_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let x1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x2: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ds = two_cov(x1.clone(), x2.clone());
        let w = icw_weights(&ds, &["x1", "x2"]).unwrap();

        // Standardized columns have unit variance, so the covariance is
        // [[1, r], [r, 1]] and its inverse is [[1, -r], [-r, 1]] / (1 - r^2):
        // both row sums equal (1 - r) / (1 - r^2), hence equal weights.
        let (m1, s1, m2, s2) = (crate::stats::mean(&x1), crate::stats::sd(&x1), crate::stats::mean(&x2), crate::stats::sd(&x2));
        let r: f64 = x1.iter().zip(&x2).map(|(a, b)| (a - m1) / s1 * (b - m2) / s2).sum::<f64>() / (n as f64 - 1.0);
        let row = (1.0 - r) / (1.0 - r * r);
        assert!((w[0] - row / (2.0 * row)).abs() < 1e-9);
        assert!((w[0] - 0.5).abs() < 1e-9 && (w[1] - 0.5).abs() < 1e-9);
        assert!(r.abs() < 0.05);
    }

    #[test]
    fn icw_index_has_zero_mean_unit_sd() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x1: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x2: Vec<f64> = x1.iter().map(|v: &f64| 3.0 * v + rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let idx = icw_index(&two_cov(x1, x2), &["x1", "x2"]).unwrap();
        assert!(crate::stats::mean(&idx).abs() < 1e-10);
        assert!((crate::stats::sd(&idx) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn design_matrix_drops_treatment_j() {
        let n = 3;
        let ds = Dataset::new(
            vec!["w1".into(), "w2".into()],
            DMatrix::from_fn(n, 2, |i, j| (i * 10 + j) as f64),
            vec!["a1".into(), "a2".into()],
            DMatrix::from_fn(n, 2, |i, j| (100 + i * 10 + j) as f64),
            vec![0.0; n],
            None,
        )
        .unwrap();
        let d = design_matrix(&ds, 0);
        assert_eq!(d.columns, vec!["w1", "w2", "a2"]);
        assert_eq!(d.x.column(2).iter().copied().collect::<Vec<_>>(), vec![101.0, 111.0, 121.0]);
        assert_eq!(d, design_matrix(&ds, 0));
        assert!(!design_matrix(&ds, 1).columns.contains(&"a2".to_string()));

        let single = toy(&[0.0, 1.0], None);
        assert_eq!(design_matrix(&single, 0).x, *single.covariates());
    }

    proptest! {
        #[test]
        fn indicator_and_binding_mask_partition_units(
            a in proptest::collection::vec(-3i32..4, 1..40),
            target in -3i32..4,
            kind in 0usize..2,
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let ds = toy(&a, None);
            let kind = [InterventionKind::Floor, InterventionKind::Fixed][kind];
            let iv = Intervention::new("p", 0, kind, f64::from(target));
            let ind = nonintervened_indicator(&ds, &iv);
            let mask = binding_mask(&ds, &iv);
            for (i, b) in ind.iter().zip(&mask) {
                prop_assert!((*i == 0.0) == *b);
                prop_assert!(*i == 0.0 || *i == 1.0);
            }
        }

        #[test]
        fn binding_share_is_scale_invariant(
            a in proptest::collection::vec(0i32..2, 1..30),
            scale in 0.01f64..100.0,
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let w: Vec<f64> = (0..a.len()).map(|i| 1.0 + (i % 3) as f64).collect();
            let iv = Intervention::new("p", 0, InterventionKind::SetBinary, 0.0);
            let s1 = binding_share(&toy(&a, Some(w.clone())), &iv);
            let s2 = binding_share(&toy(&a, Some(w.iter().map(|v| v * scale).collect())), &iv);
            prop_assert!((s1 - s2).abs() < 1e-12);
        }
    }
}
