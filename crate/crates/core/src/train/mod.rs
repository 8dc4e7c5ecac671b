//! Training loops for the three learners: the supervised classifier, the
//! autoencoder (normal and unlabeled frames only) and the semi-supervised
//! autoencoder with its classification head.

pub mod infer;

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{augment, channel_means, to_batch, uniform_permutation, AugmentPolicy, DataError, Label, Sample, WeightedSampler};
use crate::metrics;
use crate::nets::{Learner, NetError, Network};
use crate::seed;
use crate::tensor::{Adam, AdamConfig, Element, Graph, Precision, TensorError, Var, PROB_EPS};

pub use infer::anomaly_probability;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Inverse class frequency, with replacement.
    #[default]
    Weighted,
    /// A fresh permutation each epoch.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub precision: Precision,
    pub seed: u64,
    pub augmentation: AugmentPolicy,
    pub sampler: SamplerKind,
    /// Weight of the classification term in the semi-supervised objective.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            optimizer: AdamConfig::default(),
            batch_size: 32,
            precision: Precision::F32,
            seed: 0,
            augmentation: AugmentPolicy::default(),
            sampler: SamplerKind::Weighted,
            lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.optimizer.lr >= 0.0) || !(self.lambda >= 0.0) {
            return Err(TrainError::Config("lr and lambda must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// The training objective evaluated on the validation set.
    pub loss: f64,
    /// AUC of the learner's anomaly score, when validation has both classes.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub learner: Learner,
    pub train_samples: usize,
    /// Mean training loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    pub val_metrics: Vec<Option<EpochMetrics>>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Supervised training on labeled samples with cross-entropy over the
/// softmaxed logits. Unlabeled samples are ignored.
pub fn train_classifier<T: Element>(net: &mut Network<T>, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    expect_learner(net, Learner::Classifier)?;
    let data: Vec<&Sample> = train.iter().filter(|s| s.label.is_labeled()).collect();
    let anomalies = data.iter().filter(|s| s.label == Label::Anomaly).count();
    if anomalies == 0 {
        return Err(TrainError::Precondition("classifier training needs labeled anomalies".into()));
    }
    if anomalies == data.len() {
        return Err(TrainError::Precondition("classifier training needs labeled normal samples".into()));
    }
    run(net, &data, val, cfg, Objective::Classifier)
}

/// Reconstruction training. Only normal and unlabeled samples are accepted.
pub fn train_autoencoder<T: Element>(net: &mut Network<T>, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    expect_learner(net, Learner::Autoencoder)?;
    if let Some(s) = train.iter().find(|s| s.label == Label::Anomaly) {
        return Err(TrainError::Precondition(format!(
            "autoencoder input must exclude anomalies (found `{}` from patient {})",
            s.source_class, s.patient_id
        )));
    }
    if train.is_empty() {
        return Err(TrainError::Precondition("autoencoder training set is empty".into()));
    }
    let data: Vec<&Sample> = train.iter().collect();
    run(net, &data, val, cfg, Objective::Autoencoder)
}

/// Joint training: reconstruction on every sample plus `lambda` times the
/// head's cross-entropy on the labeled ones.
pub fn train_semi<T: Element>(net: &mut Network<T>, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    expect_learner(net, Learner::Semi)?;
    if !train.iter().any(|s| s.label.is_labeled()) {
        return Err(TrainError::Precondition("semi-supervised training needs at least one labeled sample".into()));
    }
    let data: Vec<&Sample> = train.iter().collect();
    run(net, &data, val, cfg, Objective::Semi(cfg.lambda))
}

/// Dispatches on the network's learner.
pub fn train<T: Element>(net: &mut Network<T>, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    match net.learner {
        Learner::Classifier => train_classifier(net, train, val, cfg),
        Learner::Autoencoder => train_autoencoder(net, train, val, cfg),
        Learner::Semi => train_semi(net, train, val, cfg),
    }
}

fn expect_learner<T>(net: &Network<T>, want: Learner) -> Result<()> {
    if net.learner != want {
        return Err(TrainError::Config(format!("expected a {want} network, got {}", net.learner)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    Classifier,
    Autoencoder,
    Semi(f64),
}

fn targets<T: Element>(batch: &[&Sample]) -> (Vec<T>, Vec<bool>) {
    batch
        .iter()
        .map(|s| match s.label.binary() {
            Some(b) => (T::from_f64_lossy(f64::from(b)), true),
            None => (T::zero(), false),
        })
        .unzip()
}

fn build_loss<T: Element>(
    net: &Network<T>,
    g: &mut Graph<T>,
    params: &[Var],
    batch: &[&Sample],
    x: Var,
    objective: Objective,
) -> std::result::Result<Var, NetError> {
    let out = net.forward(g, params, x)?;
    let loss = match objective {
        Objective::Classifier => {
            let (y, _) = targets::<T>(batch);
            let p = g.anomaly_prob(out.logits.expect("classifier head"))?;
            g.bce(p, &y, None)?
        }
        Objective::Autoencoder => g.mse(out.reconstruction.expect("decoder"), x)?,
        Objective::Semi(lambda) => {
            let (y, mask) = targets::<T>(batch);
            let rec = g.mse(out.reconstruction.expect("decoder"), x)?;
            let p = g.anomaly_prob(out.logits.expect("semi head"))?;
            let ce = g.bce(p, &y, Some(&mask))?;
            // Kept in the graph even at lambda = 0 so the head still receives
            // (zero) gradients and the optimizer state stays aligned.
            let ce = g.scale(ce, T::from_f64_lossy(lambda))?;
            g.add(rec, ce)?
        }
    };
    Ok(loss)
}

fn epoch_order(data: &[&Sample], cfg: &TrainConfig, objective: Objective, epoch: usize) -> Result<Vec<usize>> {
    let mut rng = seed::rng(cfg.seed, "train.order", epoch as u64);
    let weighted = cfg.sampler == SamplerKind::Weighted && matches!(objective, Objective::Classifier);
    Ok(if weighted {
        let labels: Vec<Label> = data.iter().map(|s| s.label).collect();
        WeightedSampler::new(&labels)?.draw(&mut rng, data.len())
    } else {
        uniform_permutation(data.len(), &mut rng)
    })
}

fn run<T: Element>(net: &mut Network<T>, data: &[&Sample], val: &[Sample], cfg: &TrainConfig, objective: Objective) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(TrainError::Config(format!("config asks for {:?} but the network is {:?}", cfg.precision, T::PRECISION)));
    }
    let start = Instant::now();
    let fill = channel_means(data.iter().map(|s| &s.image));
    let mut adam = Adam::new(cfg.optimizer, &net.params);
    let mut report = TrainReport {
        learner: net.learner,
        train_samples: data.len(),
        epoch_losses: Vec::with_capacity(cfg.epochs),
        val_metrics: Vec::with_capacity(cfg.epochs),
        wall_time_secs: 0.0,
        checkpoint: None,
    };
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data, cfg, objective, epoch)?;
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = (epoch * order.len().div_ceil(cfg.batch_size) + b) as u64;
            let batch: Vec<Sample> = idx
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let s = data[i];
                    if cfg.augmentation.is_off() {
                        return s.clone();
                    }
                    let mut rng = seed::rng(cfg.seed, "train.augment", (step << 16) | k as u64);
                    augment(s, &cfg.augmentation, &fill, &mut rng)
                })
                .collect();
            let refs: Vec<&Sample> = batch.iter().collect();
            let images: Vec<_> = batch.iter().map(|s| &s.image).collect();
            let x = to_batch::<T>(&images)?;

            let mut g = Graph::new();
            let params = net.params.bind(&mut g);
            let xv = g.constant(x);
            let result = build_loss(net, &mut g, &params, &refs, xv, objective).map_err(TrainError::from).and_then(|loss| {
                let value = g.value(loss).item().expect("scalar loss").to_f64().unwrap_or(f64::NAN);
                g.backward(loss)?;
                Ok(value)
            });
            net.params.unbind(&mut g, &params);
            let value = result?;
            adam.step(&mut net.params)?;
            net.params.zero_grad();
            if !value.is_finite() {
                return Err(TrainError::Precondition(format!("loss diverged at epoch {} (value {value})", epoch + 1)));
            }
            total += value * idx.len() as f64;
            seen += idx.len();
        }
        report.epoch_losses.push(total / seen as f64);
        net.trained_epochs += 1;
        report.val_metrics.push(if val.is_empty() { None } else { Some(validate(net, val, objective)?) });
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn validate<T: Element>(net: &Network<T>, val: &[Sample], objective: Objective) -> Result<EpochMetrics> {
    let images: Vec<_> = val.iter().map(|s| &s.image).collect();
    let labeled: Vec<(usize, u8)> = val.iter().enumerate().filter_map(|(i, s)| s.label.binary().map(|b| (i, b))).collect();
    let labels: Vec<u8> = labeled.iter().map(|&(_, b)| b).collect();
    let auc_of = |scores: &[f64]| {
        let picked: Vec<f64> = labeled.iter().map(|&(i, _)| scores[i]).collect();
        metrics::auc(&picked, &labels).ok()
    };
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 { 0.0 } else { s / n as f64 }
    };
    Ok(match objective {
        Objective::Classifier => {
            let probs: Vec<f64> = infer::logits(net, &images)?.into_iter().map(anomaly_probability).collect();
            let loss = mean(&mut labeled.iter().map(|&(i, y)| bce(probs[i], f64::from(y))));
            EpochMetrics { loss, auc: auc_of(&probs) }
        }
        Objective::Autoencoder => {
            let mse = infer::reconstruction_mse(net, &images)?;
            let loss = mean(&mut val.iter().zip(&mse).filter(|(s, _)| s.label != Label::Anomaly).map(|(_, &m)| m));
            EpochMetrics { loss, auc: auc_of(&mse) }
        }
        Objective::Semi(lambda) => {
            let probs: Vec<f64> = infer::logits(net, &images)?.into_iter().map(anomaly_probability).collect();
            let mse = infer::reconstruction_mse(net, &images)?;
            let ce = mean(&mut labeled.iter().map(|&(i, y)| bce(probs[i], f64::from(y))));
            EpochMetrics { loss: mean(&mut mse.iter().copied()) + lambda * ce, auc: auc_of(&probs) }
        }
    })
}

#[cfg(test)]
mod tests;
