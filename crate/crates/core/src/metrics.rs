//! Binary classification metrics: rank AUC, confusion-based rates, MCC,
//! per-class hit rates and a one-sided Welch test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{0}: both classes must be present")]
    SingleClass(&'static str),
    #[error("{op}: length mismatch ({left} vs {right})")]
    Length { op: &'static str, left: usize, right: usize },
    #[error("{0}: scores must not be NaN")]
    NaN(&'static str),
    #[error("{0}: label values must be 0 or 1")]
    Label(&'static str),
    #[error("welch test: each group needs at least 2 values with nonzero pooled variance")]
    Degenerate,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check_binary(op: &'static str, labels: &[u8]) -> Result<(usize, usize)> {
    let mut counts = [0usize; 2];
    for &l in labels {
        if l > 1 {
            return Err(MetricsError::Label(op));
        }
        counts[l as usize] += 1;
    }
    Ok((counts[0], counts[1]))
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(MetricsError::Length { op, left: a, right: b });
    }
    Ok(())
}

/// Area under the ROC curve via tie-averaged ranks (Mann-Whitney U).
/// Label 1 is the positive (anomaly) class.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_len("auc", scores.len(), labels.len())?;
    let (neg, pos) = check_binary("auc", labels)?;
    if neg == 0 || pos == 0 {
        return Err(MetricsError::SingleClass("auc"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::NaN("auc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied block i..=j shares the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        check_len("confusion", predictions.len(), labels.len())?;
        check_binary("confusion", labels)?;
        check_binary("confusion", predictions)?;
        let mut c = Self::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p, l) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                _ => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / den.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Precision, recall, F1 and accuracy with every 0/0 taken as 0.
pub fn prf_accuracy(c: ConfusionCounts) -> Prf {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall), accuracy: ratio(tp + tn, tp + tn + fp + fn_) }
}

/// Fraction of each source class whose prediction matches its label.
pub fn per_class_proportion<S: AsRef<str>>(predictions: &[u8], labels: &[u8], classes: &[S]) -> Result<BTreeMap<String, f64>> {
    check_len("per_class_proportion", predictions.len(), labels.len())?;
    check_len("per_class_proportion", predictions.len(), classes.len())?;
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((p, l), c) in predictions.iter().zip(labels).zip(classes) {
        let e = tally.entry(c.as_ref().to_string()).or_default();
        e.0 += usize::from(p == l);
        e.1 += 1;
    }
    Ok(tally.into_iter().map(|(c, (hit, n))| (c, hit as f64 / n as f64)).collect())
}

/// Table-style report. JSON keys follow the usual column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "AUC")]
    pub auc: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "F1 Score")]
    pub f1: f64,
    #[serde(rename = "MCC")]
    pub mcc: f64,
    #[serde(rename = "Precision")]
    pub precision: f64,
    pub confusion: ConfusionCounts,
    pub per_class_proportion: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// `scores` rank samples for AUC (higher = more anomalous);
    /// `predictions` are the thresholded labels.
    pub fn evaluate<S: AsRef<str>>(scores: &[f64], predictions: &[u8], labels: &[u8], classes: &[S]) -> Result<Self> {
        let auc = auc(scores, labels)?;
        let confusion = ConfusionCounts::from_predictions(predictions, labels)?;
        let prf = prf_accuracy(confusion);
        Ok(Self {
            auc,
            recall: prf.recall,
            accuracy: prf.accuracy,
            f1: prf.f1,
            mcc: mcc(confusion),
            precision: prf.precision,
            confusion,
            per_class_proportion: per_class_proportion(predictions, labels, classes)?,
        })
    }

    /// Percentages with two decimals, in table column order.
    pub fn percent_row(&self) -> [String; 6] {
        [self.auc, self.recall, self.accuracy, self.f1, self.mcc, self.precision].map(|v| format!("{:.2}", v * 100.0))
    }
}

/// Score threshold maximising Youden's J (TPR − FPR) for the rule
/// `score >= threshold → anomaly`. Candidates are midpoints between
/// consecutive distinct scores plus one below the minimum; ties keep the
/// lowest threshold, favouring recall.
pub fn youden_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_len("youden_threshold", scores.len(), labels.len())?;
    let (neg, pos) = check_binary("youden_threshold", labels)?;
    if neg == 0 || pos == 0 {
        return Err(MetricsError::SingleClass("youden_threshold"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::NaN("youden_threshold"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Start with everything predicted anomalous (J = 0), then move the
    // threshold past one block of tied scores at a time.
    let (mut below_pos, mut below_neg) = (0usize, 0usize);
    let mut best = (0.0, scores[order[0]] - 1.0);
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        while i < order.len() && scores[order[i]] == v {
            if labels[order[i]] == 1 { below_pos += 1 } else { below_neg += 1 }
            i += 1;
        }
        if i == order.len() {
            break;
        }
        let j = (pos - below_pos) as f64 / pos as f64 - (neg - below_neg) as f64 / neg as f64;
        if j > best.0 {
            let next = scores[order[i]];
            let mid = v + (next - v) / 2.0;
            best = (j, if mid > v { mid } else { next });
        }
    }
    Ok(best.1)
}

pub const TABLE_COLUMNS: [&str; 6] = ["AUC", "Recall", "Accuracy", "F1 Score", "MCC", "Precision"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_value: f64,
}

/// Welch's unequal-variance t-test of `mean(a) > mean(b)`.
pub fn welch_greater(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::Degenerate);
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, v)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(MetricsError::Degenerate);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| MetricsError::Degenerate)?;
    Ok(WelchTest { t, df, p_value: dist.sf(t) })
}
