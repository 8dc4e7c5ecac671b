//! Soft-margin SVM trained on the dual by sequential minimal optimisation
//! with maximal-violating-pair working-set selection.

use serde::{Deserialize, Serialize};

use super::{check_row, check_table, EnsembleError, Result, Scorer};

/// Stop once the maximal KKT violation drops below this gap.
pub const KKT_TOLERANCE: f64 = 1e-3;

const MAX_ITERATIONS: usize = 10_000_000;

/// Numerical floor for the curvature of a two-variable subproblem.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => (-gamma * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    /// Z-score features with training statistics before fitting.
    pub standardize: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { kernel: Kernel::Rbf { gamma: 1.0 / 3.0 }, c: 1.0, standardize: true }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(EnsembleError::Hyper(format!("C must be positive and finite, got {}", self.c)));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(EnsembleError::Hyper(format!("gamma must be positive and finite, got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Per-feature affine map `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Population statistics; constant columns keep scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..width).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..width)
            .map(|j| {
                let sd = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(width: usize) -> Self {
        Self { mean: vec![0.0; width], scale: vec![1.0; width] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Decision value `Σ coef_i · K(sv_i, z) + bias` on scaled input `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: SvmParams,
    pub scaler: Scaler,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i · y_i` with `y ∈ {-1, +1}`; `|coef| <= C`.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl Scorer for SvmModel {
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_row(x, self.scaler.mean.len())?;
        let z = self.scaler.apply(x);
        let sum: f64 = self.support_vectors.iter().zip(&self.coef).map(|(sv, c)| c * self.params.kernel.eval(sv, &z)).sum();
        Ok(sum + self.bias)
    }

    /// A decision value of exactly zero counts as anomalous.
    fn threshold(&self) -> f64 {
        0.0
    }
}

/// Solves `min ½ αᵀQα − Σα` subject to `0 <= α <= C` and `yᵀα = 0`, where
/// `Q_ij = y_i y_j K(x_i, x_j)`. Labels 1 map to `y = +1`.
pub fn fit_svm(rows: &[Vec<f64>], labels: &[u8], params: &SvmParams) -> Result<SvmModel> {
    let width = check_table("fit_svm", rows, labels)?;
    params.validate()?;
    let scaler = if params.standardize { Scaler::fit(rows) } else { Scaler::identity(width) };
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| scaler.apply(r)).collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
    let n = xs.len();
    let k: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| params.kernel.eval(&xs[i], &xs[j])).collect()).collect();
    let c = params.c;

    let mut alpha = vec![0.0; n];
    // Gradient of the dual objective, Qα − 1.
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let (mut i, mut g_max) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut g_min) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(alpha[t], y[t]) && v > g_max {
                (i, g_max) = (t, v);
            }
            if in_low(alpha[t], y[t]) && v < g_min {
                (j, g_min) = (t, v);
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max - g_min < KKT_TOLERANCE {
            break;
        }
        iterations += 1;

        // Move along y_i Δα_i = −y_j Δα_j by the clipped Newton step.
        let curvature = (k[i][i] + k[j][j] - 2.0 * k[i][j]).max(TAU);
        let step = (g_max - g_min) / curvature;
        // Feasible range for the step t with α_i += y_i t, α_j −= y_j t.
        let room = |a: f64, dir: f64| if dir > 0.0 { c - a } else { a };
        let t = step.min(room(alpha[i], y[i])).min(room(alpha[j], -y[j]));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        alpha[i] = (old_i + y[i] * t).clamp(0.0, c);
        alpha[j] = (old_j - y[j] * t).clamp(0.0, c);
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for s in 0..n {
            grad[s] += y[s] * (y[i] * k[s][i] * di + y[j] * k[s][j] * dj);
        }
    }

    // Offset from free vectors when any exist, otherwise the midpoint of the
    // feasible interval.
    let free: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < c).collect();
    let rho = if free.is_empty() {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..n {
            let v = y[t] * grad[t];
            let at_upper = alpha[t] >= c;
            if (y[t] > 0.0) == at_upper { lb = lb.max(v) } else { ub = ub.min(v) }
        }
        (ub + lb) / 2.0
    } else {
        free.iter().map(|&t| y[t] * grad[t]).sum::<f64>() / free.len() as f64
    };

    let support: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        params: *params,
        scaler,
        support_vectors: support.iter().map(|&t| xs[t].clone()).collect(),
        coef: support.iter().map(|&t| alpha[t] * y[t]).collect(),
        bias: -rho,
        iterations,
    })
}
