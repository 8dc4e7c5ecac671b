//! Images, binary labels, manifests, patient-wise splits, augmentation,
//! class-balanced sampling and the synthetic stand-in dataset.

mod augment;
mod class_map;
mod raster;
mod manifest;
mod sampler;
mod split;
mod synth;

pub use augment::{augment, erase, erase_rect_for, hflip, rotate, sample_erase_rect, vflip, AugmentPolicy, Rect, ERASE_AREA, ERASE_ASPECT};
pub use class_map::{ClassMap, UNLABELED_CLASS};
pub use raster::{resize, Image};
pub use manifest::{load_manifest, write_manifest, ManifestLoad};
pub use sampler::{uniform_permutation, WeightedSampler};
pub use split::{patient_split, Partition, SplitSpec};
pub use synth::{oracle_score, synth_dataset, SYNTH_GROUP_SIZE};

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Element, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest line {line}: {detail}")]
    Malformed { line: u64, detail: String },
    #[error("manifest line {line} ({path}): cannot read image: {detail}")]
    Image { line: u64, path: PathBuf, detail: String },
    #[error("image: {0}")]
    InvalidImage(String),
    #[error("patient split: {0}")]
    Split(String),
    #[error("class map: {0}")]
    ClassMap(String),
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("split file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomaly,
    Unlabeled,
}

impl Label {
    /// 0 for normal, 1 for anomaly, `None` when unlabeled.
    pub fn binary(self) -> Option<u8> {
        match self {
            Label::Normal => Some(0),
            Label::Anomaly => Some(1),
            Label::Unlabeled => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
            Label::Unlabeled => "unlabeled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: Label,
    pub patient_id: String,
    pub source_class: String,
}

/// Stacks images of identical shape into an `[N, C, H, W]` tensor.
pub fn to_batch<T: Element>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| DataError::InvalidImage("empty batch".into()))?;
    let shape = first.shape();
    let mut data = Vec::with_capacity(images.len() * first.len());
    for img in images {
        if img.shape() != shape {
            return Err(DataError::InvalidImage(format!("batch mixes shapes {shape:?} and {:?}", img.shape())));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64_lossy(f64::from(v))));
    }
    Tensor::new(vec![images.len(), shape[0], shape[1], shape[2]], data).map_err(|e| DataError::InvalidImage(e.to_string()))
}

/// Per-channel mean over a set of images, used as the erase fill.
pub fn channel_means<'a>(images: impl IntoIterator<Item = &'a Image>) -> Vec<f32> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for img in images {
        if sums.is_empty() {
            sums = vec![0.0; img.channels()];
        }
        let plane = img.height() * img.width();
        for (c, s) in sums.iter_mut().enumerate() {
            *s += img.data()[c * plane..(c + 1) * plane].iter().map(|&v| f64::from(v)).sum::<f64>();
        }
        count += plane;
    }
    sums.into_iter().map(|s| (s / count.max(1) as f64) as f32).collect()
}
