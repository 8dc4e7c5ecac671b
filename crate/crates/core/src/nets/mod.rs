//! MobileNet-style encoder, mirrored decoder, and the two classification
//! heads, plus presets, parameter accounting and checkpoints.

pub mod checkpoint;
mod layers;
mod network;
mod preset;

pub use network::{Learner, ModelBundle, Network, Outputs};
pub use preset::{squeeze_channels, Activation, BlockSpec, EncoderPreset, StemSpec, PRESET_NAMES};

use thiserror::Error;

use crate::tensor::{Precision, TensorError};

/// Width of the hidden layer in the semi-supervised head.
pub const SEMI_HIDDEN: usize = layers::SEMI_HIDDEN;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid preset {0}")]
    InvalidPreset(String),
    #[error("unknown preset `{0}` (known: {known})", known = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("preset `{preset}` needs input height and width divisible by {required}, got {height}x{width}")]
    Divisibility { preset: String, required: usize, height: usize, width: usize },
    #[error("input shape mismatch: expected [N, {expected:?}], got {found:?}")]
    InputShape { expected: [usize; 3], found: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint stores {stored:?} weights but {requested:?} was requested")]
    PrecisionMismatch { stored: Precision, requested: Precision },
    #[error("model bundle mismatch: {0}")]
    BundleMismatch(String),
    #[error("{0} network has not been trained")]
    Untrained(Learner),
}

pub type Result<T> = std::result::Result<T, NetError>;
