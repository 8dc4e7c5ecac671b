//! Per-image ensemble inputs built from the three base learners.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnsembleError, Result};
use crate::data::Image;
use crate::nets::ModelBundle;
use crate::tensor::Element;
use crate::train::{anomaly_probability, infer};

pub const FEATURE_NAMES: [&str; 3] = ["logit_margin", "log_mse", "semi_prob"];

/// Reconstruction errors are clamped here before taking the log.
pub const MSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Classifier anomaly logit minus normal logit.
    pub logit_margin: f64,
    /// `ln(max(mse, MSE_FLOOR))` of the autoencoder reconstruction.
    pub log_mse: f64,
    /// Anomaly probability of the semi-supervised head.
    pub semi_prob: f64,
}

impl FeatureVector {
    pub fn from_outputs(classifier_logits: [f64; 2], mse: f64, semi_logits: [f64; 2]) -> Self {
        Self {
            logit_margin: classifier_logits[1] - classifier_logits[0],
            log_mse: mse.max(MSE_FLOOR).ln(),
            semi_prob: anomaly_probability(semi_logits),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.logit_margin, self.log_mse, self.semi_prob]
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Runs all three learners over `images` (no augmentation). Rejects a
/// bundle with any untrained member.
pub fn extract_features<T: Element>(bundle: &ModelBundle<T>, images: &[&Image]) -> Result<Vec<FeatureVector>> {
    for net in [&bundle.classifier, &bundle.autoencoder, &bundle.semi] {
        net.ensure_trained()?;
    }
    let clf = infer::logits(&bundle.classifier, images)?;
    let mse = infer::reconstruction_mse(&bundle.autoencoder, images)?;
    let semi = infer::logits(&bundle.semi, images)?;
    let out: Vec<FeatureVector> =
        clf.into_iter().zip(mse).zip(semi).map(|((c, m), s)| FeatureVector::from_outputs(c, m, s)).collect();
    if let Some(i) = out.iter().position(|f| !f.is_finite()) {
        return Err(EnsembleError::Table(format!("non-finite features for image {i}")));
    }
    Ok(out)
}

/// One line of the exported feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub sample_id: String,
    pub logit_margin: f64,
    pub log_mse: f64,
    pub semi_prob: f64,
    pub label: u8,
}

impl FeatureRow {
    pub fn new(sample_id: impl Into<String>, f: FeatureVector, label: u8) -> Self {
        Self { sample_id: sample_id.into(), logit_margin: f.logit_margin, log_mse: f.log_mse, semi_prob: f.semi_prob, label }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector { logit_margin: self.logit_margin, log_mse: self.log_mse, semi_prob: self.semi_prob }
    }
}

pub fn write_feature_csv(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["sample_id", "logit_margin", "log_mse", "semi_prob", "label"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| EnsembleError::Io { path: path.to_path_buf(), source })
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "logit_margin", "log_mse", "semi_prob", "label"] {
        return Err(EnsembleError::Table(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
