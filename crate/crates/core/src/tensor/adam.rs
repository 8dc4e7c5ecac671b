use serde::{Deserialize, Serialize};

use super::{Element, ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with bias-corrected moments. Weight decay, when non-zero, is the
/// classic L2 form added to the gradient.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = |p: &ParamStore<T>| p.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self { config, m: zeros(params), v: zeros(params), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(TensorError::StateMismatch { expected: self.m.len(), found: params.len() });
        }
        for ((name, t), m) in params.iter().zip(&self.m) {
            if t.len() != m.len() {
                return Err(TensorError::StateMismatch { expected: m.len(), found: t.len() });
            }
            if t.grad().is_none() {
                return Err(TensorError::MissingGrad(name.to_string()));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (lr, eps, wd) = (T::from_f64_lossy(c.lr), T::from_f64_lossy(c.eps), T::from_f64_lossy(c.weight_decay));
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));
        for (((_, tensor), m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = tensor.grad().expect("checked above").to_vec();
            for (((p, g), mi), vi) in tensor.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + wd * *p;
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
