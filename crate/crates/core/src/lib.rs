//! Retrospective intervention effects (RIEs) estimated by inverse-propensity
//! weighting, with propensity scores from a cross-validated stacked ensemble.
//!
//! An RIE compares the population mean outcome under a hypothetical
//! intervention on one treatment (set it to a value, or raise it to a floor)
//! with the mean that was actually observed:
//!
//! ```text
//! psi_j = E[Y(a_j, A_-j)] - E[Y]
//! ```
//!
//! Module map:
//!
//! - [`dataset`]: data model, CSV ingestion, interventions, design matrices
//! - [`learners`]: candidate propensity learners behind one fit/predict contract
//! - [`superlearner`]: V-fold CV, stacking weights on the simplex, ensemble prediction
//! - [`estimators`]: ensemble/naive IPW, OLS and matching estimators, Rubin pooling
//! - [`diagnostics`]: balance tables, positivity reports, propensity histograms
//! - [`simulation`]: the benchmark data generator and Monte Carlo harness
//! - [`report`]: CSV and text artifacts

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod linalg;
pub mod report;
pub mod seed;
pub mod simulation;
pub mod stats;
pub mod superlearner;

pub use dataset::{Dataset, Intervention, InterventionKind, Schema};
pub use error::{Error, Result};
pub use estimators::{Method, RieEstimate};
pub use learners::{FittedLearner, Learner, LearnerSpec};
pub use superlearner::{EnsembleFit, FoldPlan};

/// Lower/upper clipping bound applied to every propensity prediction.
pub const PROPENSITY_CLIP: f64 = 1e-3;
