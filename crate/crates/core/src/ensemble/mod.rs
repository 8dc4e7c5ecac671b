//! Stacking ensemble over the three base learners: per-image feature
//! vectors, a Gini random forest and an SMO-trained SVM as combiners, and a
//! random search over their hyperparameters.

mod features;
mod forest;
mod search;
mod svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsError;
use crate::nets::NetError;
use crate::train::TrainError;

pub use features::{extract_features, read_feature_csv, write_feature_csv, FeatureRow, FeatureVector, FEATURE_NAMES, MSE_FLOOR};
pub use forest::{fit_forest, ForestModel, ForestParams, Node};
pub use search::{random_search, tuning_split, Draw, ForestSpace, SearchOutcome, SearchSpace, SvmSpace, DEFAULT_DRAWS};
pub use svm::{fit_svm, Kernel, Scaler, SvmModel, SvmParams, KKT_TOLERANCE};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("{0}: both classes must be present in the labels")]
    SingleClass(&'static str),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
    #[error("feature {index} is NaN")]
    NaN { index: usize },
    #[error("feature table: {0}")]
    Table(String),
    #[error("search space is empty: {0}")]
    EmptyGrid(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("feature csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("ensemble json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

/// A fitted combiner that maps one feature row to an anomaly score.
pub trait Scorer {
    fn score(&self, x: &[f64]) -> Result<f64>;

    /// Scores at or above this value are labelled anomalous.
    fn threshold(&self) -> f64;

    fn predict(&self, x: &[f64]) -> Result<(u8, f64)> {
        let s = self.score(x)?;
        Ok((u8::from(s >= self.threshold()), s))
    }
}

/// Either fitted combiner, serialisable with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnsembleModel {
    Rf(ForestModel),
    Svm(SvmModel),
}

impl Scorer for EnsembleModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            Self::Rf(m) => m.score(x),
            Self::Svm(m) => m.score(x),
        }
    }

    fn threshold(&self) -> f64 {
        match self {
            Self::Rf(m) => m.threshold(),
            Self::Svm(m) => m.threshold(),
        }
    }
}

impl EnsembleModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

fn check_row(x: &[f64], width: usize) -> Result<()> {
    if x.len() != width {
        return Err(EnsembleError::Table(format!("row has {} features, model expects {width}", x.len())));
    }
    if let Some(index) = x.iter().position(|v| v.is_nan()) {
        return Err(EnsembleError::NaN { index });
    }
    Ok(())
}

/// Validates a training table and returns its width.
fn check_table(op: &'static str, rows: &[Vec<f64>], labels: &[u8]) -> Result<usize> {
    if rows.len() != labels.len() {
        return Err(EnsembleError::Table(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 {
        return Err(EnsembleError::Table("no feature columns".into()));
    }
    for r in rows {
        check_row(r, width)?;
        if r.iter().any(|v| v.is_infinite()) {
            return Err(EnsembleError::Table("features must be finite".into()));
        }
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(EnsembleError::Table("labels must be 0 or 1".into()));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(EnsembleError::SingleClass(op));
    }
    Ok(width)
}
