//! Random hyperparameter search scored by AUC on a held-out tuning split.

use std::fmt::Debug;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{fit_forest, ForestModel, ForestParams};
use super::svm::{fit_svm, Kernel, SvmModel, SvmParams};
use super::{check_table, EnsembleError, Result, Scorer};
use crate::metrics;
use crate::seed;

pub const DEFAULT_DRAWS: usize = 50;

/// A distribution over hyperparameters plus the matching fit routine.
pub trait SearchSpace {
    type Hyper: Clone + Debug + Serialize;
    type Model: Scorer;

    fn validate(&self) -> Result<()>;
    fn draw(&self, rng: &mut ChaCha8Rng) -> Self::Hyper;
    fn fit(&self, hyper: &Self::Hyper, rows: &[Vec<f64>], labels: &[u8], seed: u64) -> Result<Self::Model>;
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

fn log_uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        return range[0];
    }
    rng.random_range(range[0].ln()..range[1].ln()).exp()
}

fn non_empty<T>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(EnsembleError::EmptyGrid(format!("no values for {name}")));
    }
    Ok(())
}

/// Uniform choices for each forest hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSpace {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_leaf: Vec<usize>,
    pub features_per_split: Vec<usize>,
}

impl Default for ForestSpace {
    fn default() -> Self {
        Self { n_trees: vec![50, 100, 200], max_depth: vec![3, 4, 6, 8, 12], min_leaf: vec![1, 2, 4, 8], features_per_split: vec![1, 2, 3] }
    }
}

impl SearchSpace for ForestSpace {
    type Hyper = ForestParams;
    type Model = ForestModel;

    fn validate(&self) -> Result<()> {
        non_empty("n_trees", &self.n_trees)?;
        non_empty("max_depth", &self.max_depth)?;
        non_empty("min_leaf", &self.min_leaf)?;
        non_empty("features_per_split", &self.features_per_split)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> ForestParams {
        ForestParams {
            n_trees: pick(rng, &self.n_trees),
            max_depth: pick(rng, &self.max_depth),
            min_leaf: pick(rng, &self.min_leaf),
            features_per_split: Some(pick(rng, &self.features_per_split)),
            bootstrap: true,
        }
    }

    fn fit(&self, hyper: &ForestParams, rows: &[Vec<f64>], labels: &[u8], seed: u64) -> Result<ForestModel> {
        fit_forest(rows, labels, hyper, seed)
    }
}

/// Kernel choice with log-uniform ranges for `C` and the RBF `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmSpace {
    /// Any of `"linear"`, `"rbf"`.
    pub kernels: Vec<String>,
    pub c: [f64; 2],
    pub gamma: [f64; 2],
}

impl Default for SvmSpace {
    fn default() -> Self {
        Self { kernels: vec!["linear".into(), "rbf".into()], c: [1e-2, 1e2], gamma: [1e-3, 1e1] }
    }
}

impl SearchSpace for SvmSpace {
    type Hyper = SvmParams;
    type Model = SvmModel;

    fn validate(&self) -> Result<()> {
        non_empty("kernels", &self.kernels)?;
        if let Some(k) = self.kernels.iter().find(|k| !matches!(k.as_str(), "linear" | "rbf")) {
            return Err(EnsembleError::Hyper(format!("unknown kernel `{k}`")));
        }
        for (name, r) in [("C", self.c), ("gamma", self.gamma)] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(EnsembleError::Hyper(format!("{name} range must satisfy 0 < lo <= hi, got {r:?}")));
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> SvmParams {
        let kernel = self.kernels[rng.random_range(0..self.kernels.len())].as_str();
        let c = log_uniform(rng, self.c);
        let gamma = log_uniform(rng, self.gamma);
        let kernel = if kernel == "linear" { Kernel::Linear } else { Kernel::Rbf { gamma } };
        SvmParams { kernel, c, standardize: true }
    }

    fn fit(&self, hyper: &SvmParams, rows: &[Vec<f64>], labels: &[u8], _seed: u64) -> Result<SvmModel> {
        fit_svm(rows, labels, hyper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw<H> {
    pub index: usize,
    pub hyper: H,
    pub auc: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<H, M> {
    pub best_index: usize,
    pub best: H,
    /// The winning configuration refit on every input row.
    pub model: M,
    pub log: Vec<Draw<H>>,
}

/// Stratified tuning split: half of each class is sampled, then halved again
/// into `(fit, score)` index sets. Each class needs at least 4 rows so that
/// both parts contain it.
pub fn tuning_split(labels: &[u8], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = seed::rng(seed, "search.tuning_split", 0);
    let (mut fit, mut score) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 4 {
            return Err(EnsembleError::Table(format!("class {class} has {} rows; the tuning split needs at least 4", idx.len())));
        }
        idx.shuffle(&mut rng);
        let subset = idx.len().div_ceil(2);
        let half = subset.div_ceil(2);
        fit.extend_from_slice(&idx[..half]);
        score.extend_from_slice(&idx[half..subset]);
    }
    fit.sort_unstable();
    score.sort_unstable();
    Ok((fit, score))
}

/// Draws `n_draws` configurations, fits each on the tuning fit part and
/// scores its AUC on the tuning score part. The best draw (earliest on ties)
/// is refit on all rows.
pub fn random_search<S: SearchSpace>(
    space: &S,
    rows: &[Vec<f64>],
    labels: &[u8],
    n_draws: usize,
    seed: u64,
) -> Result<SearchOutcome<S::Hyper, S::Model>> {
    space.validate()?;
    if n_draws == 0 {
        return Err(EnsembleError::Hyper("n_draws must be at least 1".into()));
    }
    check_table("random_search", rows, labels)?;
    let (fit_idx, score_idx) = tuning_split(labels, seed)?;
    let take = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<u8>) { (idx.iter().map(|&i| rows[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect()) };
    let (fit_rows, fit_labels) = take(&fit_idx);
    let (score_rows, score_labels) = take(&score_idx);

    let mut rng = seed::rng(seed, "search.draw", 0);
    let mut log: Vec<Draw<S::Hyper>> = Vec::with_capacity(n_draws);
    for index in 0..n_draws {
        let hyper = space.draw(&mut rng);
        let model = space.fit(&hyper, &fit_rows, &fit_labels, seed)?;
        let scores = score_rows.iter().map(|r| model.score(r)).collect::<Result<Vec<f64>>>()?;
        let auc = metrics::auc(&scores, &score_labels)?;
        log.push(Draw { index, hyper, auc });
    }
    let mut best_index = 0;
    for d in &log[1..] {
        if d.auc > log[best_index].auc {
            best_index = d.index;
        }
    }
    let best = log[best_index].hyper.clone();
    let model = space.fit(&best, rows, labels, seed)?;
    Ok(SearchOutcome { best_index, best, model, log })
}
