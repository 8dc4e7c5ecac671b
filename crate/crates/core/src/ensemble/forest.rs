//! Random forest of Gini-impurity CART trees over bootstrap resamples.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_row, check_table, EnsembleError, Result, Scorer};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means ⌈√m⌉.
    pub features_per_split: Option<usize>,
    /// Fit each tree on a bootstrap resample instead of the full table.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, min_leaf: 2, features_per_split: None, bootstrap: true }
    }
}

impl ForestParams {
    fn validate(&self, width: usize) -> Result<usize> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(EnsembleError::Hyper(format!(
                "n_trees, max_depth and min_leaf must be positive (got {}, {}, {})",
                self.n_trees, self.max_depth, self.min_leaf
            )));
        }
        let k = self.features_per_split.unwrap_or_else(|| (width as f64).sqrt().ceil() as usize);
        if k == 0 {
            return Err(EnsembleError::Hyper("features_per_split must be positive".into()));
        }
        Ok(k.min(width))
    }
}

/// `x[feature] <= threshold` goes left. Leaves hold `[P(normal), P(anomaly)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
    Leaf { proba: [f64; 2] },
}

impl Node {
    fn anomaly_probability(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { proba } => return proba[1],
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<Node>,
}

impl Scorer for ForestModel {
    /// Mean leaf anomaly probability over all trees.
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_row(x, self.n_features)?;
        Ok(self.trees.iter().map(|t| t.anomaly_probability(x)).sum::<f64>() / self.trees.len() as f64)
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

pub fn fit_forest(rows: &[Vec<f64>], labels: &[u8], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let width = check_table("fit_forest", rows, labels)?;
    let k = params.validate(width)?;
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed, "forest.tree", t as u64);
            let idx: Vec<usize> = if params.bootstrap {
                (0..rows.len()).map(|_| rng.random_range(0..rows.len())).collect()
            } else {
                (0..rows.len()).collect()
            };
            let grower = Grower { rows, labels, params, k, width };
            grower.grow(idx, 0, &mut rng)
        })
        .collect();
    Ok(ForestModel { params: *params, seed, n_features: width, trees })
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [u8],
    params: &'a ForestParams,
    k: usize,
    width: usize,
}

struct Best {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let pos = idx.iter().filter(|&&i| self.labels[i] == 1).count() as f64;
        let p = pos / idx.len() as f64;
        Node::Leaf { proba: [1.0 - p, p] }
    }

    fn grow(&self, idx: Vec<usize>, depth: usize, rng: &mut impl Rng) -> Node {
        let pos = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        if depth >= self.params.max_depth || pos == 0 || pos == idx.len() || idx.len() < 2 * self.params.min_leaf {
            return self.leaf(&idx);
        }
        let mut features = sample(rng, self.width, self.k).into_vec();
        features.sort_unstable();
        let Some(best) = self.best_split(&idx, pos, &features) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][best.feature] <= best.threshold);
        let l = self.grow(left, depth + 1, rng);
        let r = self.grow(right, depth + 1, rng);
        Node::Split { feature: best.feature, threshold: best.threshold, left: Box::new(l), right: Box::new(r) }
    }

    /// Lowest weighted child impurity over all cut points of the candidate
    /// features; only strict improvements over the parent count. Ties keep the
    /// first feature and the lowest cut.
    fn best_split(&self, idx: &[usize], pos: usize, features: &[usize]) -> Option<Best> {
        let n = idx.len();
        let parent = gini(pos, n);
        let mut best: Option<Best> = None;
        let mut order = idx.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let mut left_pos = 0;
            for cut in 1..n {
                left_pos += usize::from(self.labels[order[cut - 1]] == 1);
                let (lo, hi) = (self.rows[order[cut - 1]][f], self.rows[order[cut]][f]);
                if lo == hi || cut < self.params.min_leaf || n - cut < self.params.min_leaf {
                    continue;
                }
                let impurity = (cut as f64 * gini(left_pos, cut) + (n - cut) as f64 * gini(pos - left_pos, n - cut)) / n as f64;
                if impurity < parent - 1e-12 && best.as_ref().is_none_or(|b| impurity < b.impurity - 1e-12) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(Best { impurity, feature: f, threshold: if mid < hi { mid } else { lo } });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn accuracy(m: &ForestModel, rows: &[Vec<f64>], labels: &[u8]) -> f64 {
        let hits = rows.iter().zip(labels).filter(|(r, &l)| m.predict(r).unwrap().0 == l).count();
        hits as f64 / rows.len() as f64
    }

    fn xor(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let labels = rows.iter().map(|r| u8::from((r[0] > 0.0) != (r[1] > 0.0))).collect();
        (rows, labels)
    }

    #[test]
    fn single_deep_tree_separates_four_points() {
        // Separable by one cut on the second column only.
        let rows = vec![vec![0.3, -30.0], vec![0.1, -29.0], vec![0.2, -25.0], vec![0.0, -24.0]];
        let labels = vec![0, 0, 1, 1];
        let params = ForestParams { n_trees: 1, max_depth: usize::MAX, min_leaf: 1, features_per_split: Some(2), bootstrap: false };
        let m = fit_forest(&rows, &labels, &params, 0).unwrap();
        assert_eq!(accuracy(&m, &rows, &labels), 1.0);
        // Exhaustive split oracle: the only zero-impurity single cut lies
        // between -29 and -25 on feature 1.
        match &m.trees[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 1);
                assert!(*threshold > -29.0 && *threshold < -25.0);
            }
            leaf => panic!("expected a split, got {leaf:?}"),
        }
    }

    #[test]
    fn xor_is_learned() {
        let (rows, labels) = xor(400, 3);
        let m = fit_forest(&rows, &labels, &ForestParams::default(), 11).unwrap();
        assert_eq!(m.trees.len(), 100);
        assert!(m.trees.iter().all(|t| t.depth() <= 8));
        assert!(accuracy(&m, &rows, &labels) >= 0.95);
    }

    #[test]
    fn identical_rows_give_empirical_leaf() {
        let rows = vec![vec![1.0, 2.0]; 5];
        let labels = vec![1, 0, 1, 1, 0];
        let params = ForestParams { n_trees: 3, bootstrap: false, ..ForestParams::default() };
        let m = fit_forest(&rows, &labels, &params, 0).unwrap();
        for t in &m.trees {
            assert_eq!(*t, Node::Leaf { proba: [0.4, 0.6] });
        }
        assert_eq!(m.predict(&[1.0, 2.0]).unwrap(), (1, 0.6));
    }

    #[test]
    fn unanimous_stumps_score_one() {
        let stump = Node::Split {
            feature: 0,
            threshold: 0.0,
            left: Box::new(Node::Leaf { proba: [1.0, 0.0] }),
            right: Box::new(Node::Leaf { proba: [0.0, 1.0] }),
        };
        let m = ForestModel { params: ForestParams::default(), seed: 0, n_features: 1, trees: vec![stump; 7] };
        assert_eq!(m.predict(&[2.0]).unwrap(), (1, 1.0));
        assert_eq!(m.predict(&[-2.0]).unwrap(), (0, 0.0));
        assert!(matches!(m.predict(&[f64::NAN]), Err(EnsembleError::NaN { index: 0 })));
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(EnsembleError::Table(_))));
    }

    #[test]
    fn rejects_bad_input() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(matches!(fit_forest(&rows, &[1, 1], &ForestParams::default(), 0), Err(EnsembleError::SingleClass(_))));
        let bad = ForestParams { n_trees: 0, ..ForestParams::default() };
        assert!(matches!(fit_forest(&rows, &[0, 1], &bad, 0), Err(EnsembleError::Hyper(_))));
        let bad = ForestParams { features_per_split: Some(0), ..ForestParams::default() };
        assert!(matches!(fit_forest(&rows, &[0, 1], &bad, 0), Err(EnsembleError::Hyper(_))));
        assert!(matches!(fit_forest(&[vec![f64::NAN], vec![1.0]], &[0, 1], &ForestParams::default(), 0), Err(EnsembleError::NaN { .. })));
    }

    #[test]
    fn json_round_trip() {
        let (rows, labels) = xor(60, 1);
        let m = fit_forest(&rows, &labels, &ForestParams { n_trees: 4, ..ForestParams::default() }, 2).unwrap();
        let back: ForestModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    /// Best single-cut Gini by enumerating every subset induced by a
    /// threshold on every feature.
    fn brute_stump_impurity(rows: &[Vec<f64>], labels: &[u8], min_leaf: usize) -> f64 {
        let n = rows.len();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        let mut best = gini(pos, n);
        for f in 0..rows[0].len() {
            for t in rows.iter().map(|r| r[f]) {
                let left: Vec<usize> = (0..n).filter(|&i| rows[i][f] <= t).collect();
                let (nl, nr) = (left.len(), n - left.len());
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let lp = left.iter().filter(|&&i| labels[i] == 1).count();
                let imp = (nl as f64 * gini(lp, nl) + nr as f64 * gini(pos - lp, nr)) / n as f64;
                best = best.min(imp);
            }
        }
        best
    }

    fn table() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<u8>)> {
        prop::collection::vec((0i32..8, 0i32..8, 0u8..2), 4..24).prop_map(|v| {
            let mut labels: Vec<u8> = v.iter().map(|r| r.2).collect();
            labels[0] = 0;
            labels[1] = 1;
            (v.iter().map(|r| vec![f64::from(r.0), f64::from(r.1)]).collect(), labels)
        })
    }

    fn stump_impurity(m: &ForestModel, rows: &[Vec<f64>], labels: &[u8]) -> f64 {
        let n = rows.len();
        match &m.trees[0] {
            Node::Leaf { .. } => gini(labels.iter().filter(|&&l| l == 1).count(), n),
            Node::Split { feature, threshold, .. } => {
                let left: Vec<usize> = (0..n).filter(|&i| rows[i][*feature] <= *threshold).collect();
                let lp = left.iter().filter(|&&i| labels[i] == 1).count();
                let pos = labels.iter().filter(|&&l| l == 1).count();
                let nl = left.len();
                (nl as f64 * gini(lp, nl) + (n - nl) as f64 * gini(pos - lp, n - nl)) / n as f64
            }
        }
    }

    proptest! {
        #[test]
        fn stump_matches_exhaustive_split_oracle((rows, labels) in table()) {
            let params = ForestParams { n_trees: 1, max_depth: 1, min_leaf: 1, features_per_split: Some(2), bootstrap: false };
            let m = fit_forest(&rows, &labels, &params, 0).unwrap();
            let got = stump_impurity(&m, &rows, &labels);
            prop_assert!((got - brute_stump_impurity(&rows, &labels, 1)).abs() < 1e-12);
        }

        #[test]
        fn score_is_invariant_under_tree_order(seed in 0u64..1000) {
            let (rows, labels) = xor(40, seed);
            let mut m = fit_forest(&rows, &labels, &ForestParams { n_trees: 9, ..ForestParams::default() }, seed).unwrap();
            let before: Vec<f64> = rows.iter().map(|r| m.score(r).unwrap()).collect();
            m.trees.reverse();
            m.trees.rotate_left((seed % 9) as usize);
            for (r, b) in rows.iter().zip(&before) {
                prop_assert!((m.score(r).unwrap() - b).abs() < 1e-12);
            }
        }

        #[test]
        fn score_is_invariant_under_monotone_refit((rows, labels) in table(), feature in 0usize..2, seed in 0u64..100) {
            // Without bootstrap every scored row took part in fitting, so
            // cut points between neighbouring values route it identically.
            let params = ForestParams { n_trees: 5, features_per_split: Some(1), bootstrap: false, ..ForestParams::default() };
            let a = fit_forest(&rows, &labels, &params, seed).unwrap();
            let moved: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r[feature] = (0.5 * r[feature]).exp() - 3.0;
                    r
                })
                .collect();
            let b = fit_forest(&moved, &labels, &params, seed).unwrap();
            for (r, m) in rows.iter().zip(&moved) {
                prop_assert_eq!(a.score(r).unwrap(), b.score(m).unwrap());
            }
        }

        #[test]
        fn single_feature_stumps_are_monotone(xs in prop::collection::vec(0i32..8, 4..24), probe in prop::collection::vec(-2.0f64..10.0, 2..20)) {
            // Anomaly rate increases with the feature.
            let col: Vec<Vec<f64>> = xs.iter().map(|&x| vec![f64::from(x)]).collect();
            let mono: Vec<u8> = xs.iter().map(|&x| u8::from(x >= 4)).collect();
            prop_assume!(mono.contains(&0) && mono.contains(&1));
            let params = ForestParams { n_trees: 15, max_depth: 1, min_leaf: 1, features_per_split: None, bootstrap: true };
            let m = fit_forest(&col, &mono, &params, 5).unwrap();
            let mut xs = probe;
            xs.sort_by(f64::total_cmp);
            let scores: Vec<f64> = xs.iter().map(|&x| m.score(&[x]).unwrap()).collect();
            prop_assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
