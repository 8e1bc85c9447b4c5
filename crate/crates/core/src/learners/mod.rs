//! Candidate propensity-score learners.
//!
//! Every candidate fits a binary 0/1 target and predicts probabilities that
//! are clipped to `[clip, 1 - clip]`. New candidates plug in through the
//! [`Learner`] and [`Model`] traits.

mod boosting;
mod krls;
mod logistic;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::PROPENSITY_CLIP;

pub use boosting::BoostedTrees;
pub use krls::Krls;
pub use logistic::LogisticModel;

/// A fitted prediction rule before clipping.
pub trait Model: Send + Sync + fmt::Debug {
    /// Number of feature columns the model was trained on.
    fn width(&self) -> usize;

    /// Unclipped predictions, one per row of `x`.
    fn predict_raw(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

/// Anything that can be fitted to a binary target.
pub trait Learner: Send + Sync {
    fn name(&self) -> String;

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<FittedLearner>;
}

impl<L: Learner + ?Sized> Learner for Box<L> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<FittedLearner> {
        (**self).fit(x, y, seed)
    }
}

impl<L: Learner + ?Sized> Learner for Arc<L> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<FittedLearner> {
        (**self).fit(x, y, seed)
    }
}

/// An immutable fitted candidate; cheap to clone and share across threads.
#[derive(Debug, Clone)]
pub struct FittedLearner {
    name: String,
    model: Arc<dyn Model>,
    clip: f64,
    degenerate: bool,
}

impl FittedLearner {
    pub fn new(name: impl Into<String>, model: Arc<dyn Model>, clip: f64) -> Self {
        Self { name: name.into(), model, clip, degenerate: false }
    }

    /// Fallback used when the training target has a single class.
    pub fn base_rate(name: impl Into<String>, width: usize, rate: f64, clip: f64) -> Self {
        Self {
            name: name.into(),
            model: Arc::new(Constant { width, value: rate }),
            clip,
            degenerate: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    /// True when the fit fell back to a constant base rate.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn width(&self) -> usize {
        self.model.width()
    }

    pub fn model(&self) -> &dyn Model {
        self.model.as_ref()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.width() {
            return Err(Error::Shape { expected: self.width(), got: x.ncols() });
        }
        let (lo, hi) = (self.clip, 1.0 - self.clip);
        Ok(self.model.predict_raw(x).into_iter().map(|p| clip(p, lo, hi)).collect())
    }
}

fn clip(p: f64, lo: f64, hi: f64) -> f64 {
    if p.is_nan() {
        return lo;
    }
    p.clamp(lo, hi)
}

#[derive(Debug, Clone)]
struct Constant {
    width: usize,
    value: f64,
}

impl Model for Constant {
    fn width(&self) -> usize {
        self.width
    }

    fn predict_raw(&self, x: &DMatrix<f64>) -> Vec<f64> {
        vec![self.value; x.nrows()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    Logistic,
    RidgeLogistic,
    Krls,
    TreeEnsemble,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] =
        [LearnerKind::Logistic, LearnerKind::RidgeLogistic, LearnerKind::Krls, LearnerKind::TreeEnsemble];
}

/// Built-in candidates with their hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    /// Unpenalized logistic regression with intercept, fitted by IRLS.
    Logistic,
    /// Logistic regression with penalty `lambda * |beta|^2` (intercept unpenalized).
    RidgeLogistic { lambda: f64 },
    /// Kernel regularized least squares on standardized features with
    /// Gaussian kernel `exp(-|x - x'|^2 / sigma2)`. `lambda: None` selects
    /// the penalty by minimizing leave-one-out squared error.
    Krls { sigma2: f64, lambda: Option<f64> },
    /// Gradient-boosted regression trees on logistic loss.
    TreeEnsemble { n_trees: usize, max_depth: usize, learning_rate: f64 },
}

pub const DEFAULT_TREES: usize = 200;
pub const DEFAULT_TREE_DEPTH: usize = 2;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
/// Ridge penalty per observation: `lambda = n / 100`.
pub const RIDGE_PENALTY_PER_ROW: f64 = 0.01;

impl LearnerSpec {
    /// Default regularization settings as pure functions of the data shape.
    ///
    /// KRLS uses `sigma2 = K` (the number of columns), ridge logistic uses
    /// `lambda = N / 100`, boosted trees use 200 depth-2 trees at rate 0.1.
    pub fn rule_of_thumb(kind: LearnerKind, x: &DMatrix<f64>, _y: &[f64]) -> LearnerSpec {
        match kind {
            LearnerKind::Logistic => LearnerSpec::Logistic,
            LearnerKind::RidgeLogistic => {
                LearnerSpec::RidgeLogistic { lambda: RIDGE_PENALTY_PER_ROW * x.nrows() as f64 }
            }
            LearnerKind::Krls => LearnerSpec::Krls { sigma2: x.ncols().max(1) as f64, lambda: None },
            LearnerKind::TreeEnsemble => LearnerSpec::TreeEnsemble {
                n_trees: DEFAULT_TREES,
                max_depth: DEFAULT_TREE_DEPTH,
                learning_rate: DEFAULT_LEARNING_RATE,
            },
        }
    }

    /// The full default candidate library for a design matrix.
    pub fn default_library(x: &DMatrix<f64>, y: &[f64]) -> Vec<LearnerSpec> {
        LearnerKind::ALL.iter().map(|&k| Self::rule_of_thumb(k, x, y)).collect()
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerSpec::Logistic => LearnerKind::Logistic,
            LearnerSpec::RidgeLogistic { .. } => LearnerKind::RidgeLogistic,
            LearnerSpec::Krls { .. } => LearnerKind::Krls,
            LearnerSpec::TreeEnsemble { .. } => LearnerKind::TreeEnsemble,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("{}: {what} must be positive", self.name())));
        match *self {
            LearnerSpec::Logistic => Ok(()),
            LearnerSpec::RidgeLogistic { lambda } if !(lambda > 0.0 && lambda.is_finite()) => bad("lambda"),
            LearnerSpec::Krls { sigma2, .. } if !(sigma2 > 0.0 && sigma2.is_finite()) => bad("sigma2"),
            LearnerSpec::Krls { lambda: Some(l), .. } if !(l > 0.0 && l.is_finite()) => bad("lambda"),
            LearnerSpec::TreeEnsemble { max_depth: 0, .. } => bad("max_depth"),
            LearnerSpec::TreeEnsemble { learning_rate, .. } if !(learning_rate > 0.0) => bad("learning_rate"),
            _ => Ok(()),
        }
    }
}

impl Learner for LearnerSpec {
    fn name(&self) -> String {
        match self {
            LearnerSpec::Logistic => "logistic",
            LearnerSpec::RidgeLogistic { .. } => "ridge_logistic",
            LearnerSpec::Krls { .. } => "krls",
            LearnerSpec::TreeEnsemble { .. } => "tree_ensemble",
        }
        .to_string()
    }

    fn fit(&self, x: &DMatrix<f64>, y: &[f64], _seed: u64) -> Result<FittedLearner> {
        self.validate()?;
        let base = check_training_data(x, y)?;
        let clip = PROPENSITY_CLIP;
        if base == 0.0 || base == 1.0 {
            return Ok(FittedLearner::base_rate(self.name(), x.ncols(), base, clip));
        }
        let model: Arc<dyn Model> = match *self {
            LearnerSpec::Logistic => Arc::new(logistic::fit(x, y, 0.0)?),
            LearnerSpec::RidgeLogistic { lambda } => Arc::new(logistic::fit(x, y, lambda)?),
            LearnerSpec::Krls { sigma2, lambda } => Arc::new(krls::fit(x, y, sigma2, lambda)?),
            LearnerSpec::TreeEnsemble { n_trees, max_depth, learning_rate } => {
                Arc::new(boosting::fit(x, y, n_trees, max_depth, learning_rate))
            }
        };
        Ok(FittedLearner::new(self.name(), model, clip))
    }
}

/// Validate a training set and return the base rate `mean(y)`.
fn check_training_data(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::Invalid(format!("{} feature rows but {} targets", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::Invalid("need at least two training rows".into()));
    }
    if !crate::linalg::all_finite(x) {
        return Err(Error::Numeric("training features contain non-finite values".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid("training target must be 0/1".into()));
    }
    Ok(y.iter().sum::<f64>() / y.len() as f64)
}
