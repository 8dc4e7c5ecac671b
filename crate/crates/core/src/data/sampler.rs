use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{DataError, Label, Result};

/// Draws indices with replacement, each with probability proportional to
/// the inverse frequency of its class, so both classes are drawn equally
/// often in expectation.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    weights: Vec<f64>,
}

impl WeightedSampler {
    pub fn new(labels: &[Label]) -> Result<Self> {
        let mut counts = [0usize; 2];
        for (i, l) in labels.iter().enumerate() {
            let b = l.binary().ok_or_else(|| DataError::Sampler(format!("sample {i} is unlabeled")))?;
            counts[b as usize] += 1;
        }
        if counts.contains(&0) {
            return Err(DataError::Sampler(format!(
                "both classes are required, got {} normal and {} anomaly",
                counts[0], counts[1]
            )));
        }
        let weights: Vec<f64> =
            labels.iter().map(|l| 1.0 / counts[l.binary().expect("checked") as usize] as f64).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| DataError::Sampler(e.to_string()))?;
        Ok(Self { dist, weights })
    }

    /// Probability of drawing each index.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

/// A shuffled `0..n`.
pub fn uniform_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
