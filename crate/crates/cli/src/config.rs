//! Run configuration: one JSON document describing data, architecture,
//! training, ensemble search and outputs. Missing keys take defaults, and the
//! fully resolved form is written into every run directory.

use std::fs;
use std::path::{Path, PathBuf};

use edgescope::ensemble::{ForestSpace, SvmSpace, DEFAULT_DRAWS};
use edgescope::nets::Learner;
use edgescope::seed;
use edgescope::tensor::Precision;
use edgescope::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// Generated in memory; train and test use distinct derived seeds.
    Synth { normal: usize, anomaly: usize, test_normal: usize, test_anomaly: usize, size: usize },
    /// CSV manifests. Relative paths resolve against the config file.
    Manifest { train: PathBuf, test: PathBuf, class_map: String, height: usize, width: usize },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synth { normal: 500, anomaly: 500, test_normal: 200, test_anomaly: 200, size: 32 }
    }
}

impl DataConfig {
    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            DataConfig::Synth { size, .. } => [3, *size, *size],
            DataConfig::Manifest { height, width, .. } => [3, *height, *width],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfigs {
    pub clf: TrainConfig,
    pub ae: TrainConfig,
    pub semi: TrainConfig,
}

impl LearnerConfigs {
    pub fn get(&self, learner: Learner) -> &TrainConfig {
        match learner {
            Learner::Classifier => &self.clf,
            Learner::Autoencoder => &self.ae,
            Learner::Semi => &self.semi,
        }
    }

    fn get_mut(&mut self, learner: Learner) -> &mut TrainConfig {
        match learner {
            Learner::Classifier => &mut self.clf,
            Learner::Autoencoder => &mut self.ae,
            Learner::Semi => &mut self.semi,
        }
    }
}

/// Which pool rows the autoencoder trains on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AeFilter {
    /// Normal and unlabeled rows.
    #[default]
    NormalOnly,
    /// Every row; rejected by the trainer when anomalies are present.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub draws: usize,
    pub forest: ForestSpace,
    pub svm: SvmSpace,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { draws: DEFAULT_DRAWS, forest: ForestSpace::default(), svm: SvmSpace::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub preset: String,
    pub precision: Precision,
    /// Fraction of non-test patients assigned to training; the rest validate.
    pub train_ratio: f64,
    pub train: LearnerConfigs,
    pub ae_filter: AeFilter,
    pub ensemble: EnsembleConfig,
    pub out: PathBuf,
    /// Worker threads; `null` lets the runtime decide.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            preset: "desk_tiny".into(),
            precision: Precision::F32,
            train_ratio: 0.8,
            train: LearnerConfigs::default(),
            ae_filter: AeFilter::NormalOnly,
            ensemble: EnsembleConfig::default(),
            out: PathBuf::from("runs"),
            threads: None,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub draws: Option<usize>,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg: RunConfig =
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?;
                cfg.rebase(p.parent().unwrap_or(Path::new(".")));
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        if let Some(d) = overrides.draws {
            cfg.ensemble.draws = d;
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        if let DataConfig::Manifest { train, test, .. } = &mut self.data {
            for p in [train, test] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    /// Pins values that derive from others: each learner trains with the run
    /// precision and a seed derived from the run seed.
    fn resolve(&mut self) {
        for learner in Learner::ALL {
            let seed = seed::derive(self.seed, "train", learner as u64);
            let precision = self.precision;
            let t = self.train.get_mut(learner);
            t.seed = seed;
            t.precision = precision;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(CliError::Usage(format!("train_ratio must lie in (0, 1), got {}", self.train_ratio)));
        }
        if self.ensemble.draws == 0 {
            return Err(CliError::Usage("ensemble.draws must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("threads must be at least 1".into()));
        }
        for learner in Learner::ALL {
            self.train.get(learner).validate().map_err(|e| CliError::Usage(format!("train.{learner}: {e}")))?;
        }
        match &self.data {
            DataConfig::Synth { size, .. } if *size == 0 => Err(CliError::Usage("data.size must be positive".into())),
            DataConfig::Manifest { height, width, .. } if *height == 0 || *width == 0 => {
                Err(CliError::Usage("data.height and data.width must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
