//! Batched, parallel inference helpers shared by validation and feature
//! extraction. Results are per sample and in input order.

use rayon::prelude::*;

use crate::data::{to_batch, Image};
use crate::nets::Network;
use crate::tensor::Element;

use super::{Result, TrainError};

const CHUNK: usize = 64;

/// Softmax probability of the anomaly class from (normal, anomaly) logits.
pub fn anomaly_probability(logits: [f64; 2]) -> f64 {
    let z = logits[1] - logits[0];
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn chunked<R: Send>(
    images: &[&Image],
    f: impl Fn(&[&Image]) -> Result<Vec<R>> + Sync + Send,
) -> Result<Vec<R>> {
    let parts: Vec<Vec<R>> = images.par_chunks(CHUNK).map(f).collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// `(normal, anomaly)` logits of a network with a head.
pub fn logits<T: Element>(net: &Network<T>, images: &[&Image]) -> Result<Vec<[f64; 2]>> {
    if !net.learner.has_head() {
        return Err(TrainError::Config(format!("{} network has no classification head", net.learner)));
    }
    chunked(images, |chunk| {
        let (l, _) = net.infer(to_batch::<T>(chunk)?)?;
        let v = l.expect("network has a head").to_f64_vec();
        Ok(v.chunks_exact(2).map(|p| [p[0], p[1]]).collect())
    })
}

/// Mean squared reconstruction error per image.
pub fn reconstruction_mse<T: Element>(net: &Network<T>, images: &[&Image]) -> Result<Vec<f64>> {
    if !net.learner.has_decoder() {
        return Err(TrainError::Config(format!("{} network has no decoder", net.learner)));
    }
    chunked(images, |chunk| {
        let (_, r) = net.infer(to_batch::<T>(chunk)?)?;
        let r = r.expect("network has a decoder").to_f64_vec();
        let per = chunk[0].len();
        Ok(chunk
            .iter()
            .zip(r.chunks_exact(per))
            .map(|(img, rec)| {
                img.data().iter().zip(rec).map(|(&a, &b)| (f64::from(a) - b).powi(2)).sum::<f64>() / per as f64
            })
            .collect())
    })
}
