//! Command-line driver: run configuration, pipeline stages and the
//! `synth`, `train`, `fit-ensemble`, `eval` and `pipeline` commands.
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage error or unwritable
//! output, 3 training precondition, 4 missing or unreadable checkpoint,
//! 5 single-class test set.

pub mod cli;
pub mod config;
pub mod error;
pub mod run;

pub use cli::{execute, main_with_args, Cli, Command};
pub use config::{AeFilter, DataConfig, Overrides, RunConfig};
pub use error::{CliError, Result};
pub use run::{cmd_eval, cmd_fit_ensemble, cmd_pipeline, cmd_synth, cmd_train, BundlePaths, EnsembleKind, EvalSummary};
