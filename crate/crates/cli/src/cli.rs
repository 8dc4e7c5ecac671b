//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgescope::nets::Learner;

use crate::config::{Overrides, RunConfig};
use crate::error::Result;
use crate::run::{self, BundlePaths, EnsembleKind};

#[derive(Debug, Parser)]
#[command(name = "edgescope", version, about = "Ensemble anomaly detection for capsule-endoscopy style images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run config; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent directory for the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Clone)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub clf: PathBuf,
    #[arg(long)]
    pub ae: PathBuf,
    #[arg(long)]
    pub semi: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LearnerArg {
    Clf,
    Ae,
    Semi,
}

impl From<LearnerArg> for Learner {
    fn from(l: LearnerArg) -> Self {
        match l {
            LearnerArg::Clf => Learner::Classifier,
            LearnerArg::Ae => Learner::Autoencoder,
            LearnerArg::Semi => Learner::Semi,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Rf,
    Svm,
}

impl From<KindArg> for EnsembleKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Rf => EnsembleKind::Rf,
            KindArg::Svm => EnsembleKind::Svm,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as PNGs plus a manifest.
    Synth {
        #[arg(long, default_value_t = 500)]
        normal: usize,
        #[arg(long, default_value_t = 500)]
        anomaly: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one base learner.
    Train {
        learner: LearnerArg,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a random forest or SVM over the base learners' features.
    FitEnsemble {
        kind: KindArg,
        #[command(flatten)]
        checkpoints: CheckpointArgs,
        /// Random-search draws.
        #[arg(long)]
        draws: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate base learners and fitted ensembles on the test set.
    Eval {
        /// Fitted ensemble JSON; repeat for several.
        #[arg(long = "model")]
        models: Vec<PathBuf>,
        #[command(flatten)]
        checkpoints: CheckpointArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage end to end in one run directory.
    Pipeline {
        #[arg(long)]
        draws: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common, draws: Option<usize>) -> Result<RunConfig> {
    let overrides = Overrides { seed: common.seed, out: common.out.clone(), threads: common.threads, draws };
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    if let Some(n) = cfg.threads {
        // Only the first pool configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(cfg)
}

impl From<&CheckpointArgs> for BundlePaths {
    fn from(c: &CheckpointArgs) -> Self {
        BundlePaths { clf: c.clf.clone(), ae: c.ae.clone(), semi: c.semi.clone() }
    }
}

/// Runs one command and returns the lines to print on success.
pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Synth { normal, anomaly, size, seed, out } => {
            let manifest = run::cmd_synth(normal, anomaly, size, seed, &out)?;
            Ok(format!("wrote {} images and {}", normal + anomaly, manifest.display()))
        }
        Command::Train { learner, common } => {
            let cfg = load_config(&common, None)?;
            let out = run::cmd_train(&cfg, learner.into())?;
            let last = out.report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            Ok(format!(
                "trained {} for {} epochs (final loss {last:.4}) in {}",
                Learner::from(learner),
                out.report.epoch_losses.len(),
                out.dir.display()
            ))
        }
        Command::FitEnsemble { kind, checkpoints, draws, common } => {
            let cfg = load_config(&common, draws)?;
            let dir = run::cmd_fit_ensemble(&cfg, kind.into(), &(&checkpoints).into())?;
            Ok(format!("fitted {} in {}", EnsembleKind::from(kind).as_str(), dir.display()))
        }
        Command::Eval { models, checkpoints, common } => {
            let cfg = load_config(&common, None)?;
            let (dir, summary) = run::cmd_eval(&cfg, &models, &(&checkpoints).into())?;
            Ok(format!("{}results in {}", run::format_table(&summary), dir.display()))
        }
        Command::Pipeline { draws, common } => {
            let cfg = load_config(&common, draws)?;
            let (dir, summary) = run::cmd_pipeline(&cfg)?;
            Ok(format!("{}results in {}", run::format_table(&summary), dir.display()))
        }
    }
}

/// Parses `args` and executes; returns the process exit code. Clap usage
/// errors exit with 2.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            println!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

