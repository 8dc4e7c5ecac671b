//! Command errors and their process exit codes.

use std::path::PathBuf;

use edgescope::data::DataError;
use edgescope::ensemble::EnsembleError;
use edgescope::metrics::MetricsError;
use edgescope::nets::NetError;
use edgescope::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or config, or an output location that cannot be written.
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("test set has a single class ({0}); AUC is undefined")]
    SingleClassTest(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 usage or unwritable output, 3 training precondition, 4 missing or
    /// unreadable checkpoint, 5 single-class test set, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Output { .. } => 2,
            CliError::Train(_) => 3,
            CliError::Checkpoint { .. } => 4,
            CliError::SingleClassTest(_) => 5,
            CliError::Data(_) | CliError::Net(_) | CliError::Ensemble(_) | CliError::Metrics(_) => 1,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Output { path, source }
    }
}
