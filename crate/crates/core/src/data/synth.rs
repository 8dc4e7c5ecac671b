//! Synthetic desk-scale dataset: smooth pink mucosa-like textures, with
//! anomalies marked by dark-red blobs or bright specular patches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Image, Label, Sample};
use crate::seed;

/// Consecutive samples sharing one patient id.
pub const SYNTH_GROUP_SIZE: usize = 20;

const BASE: [f32; 3] = [0.85, 0.52, 0.55];
const LESION: [f32; 3] = [0.45, 0.06, 0.08];
const SPECULAR: [f32; 3] = [1.0, 1.0, 0.97];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Normal,
    Lesion,
    Specular,
}

impl Kind {
    fn source_class(self) -> &'static str {
        match self {
            Kind::Normal => "normal",
            Kind::Lesion => "dark_red_lesion",
            Kind::Specular => "specular_patch",
        }
    }
}

/// Generates `n_normal + n_anomaly` RGB images of `size x size` in a
/// seed-determined order. Patient ids cover runs of
/// [`SYNTH_GROUP_SIZE`] consecutive samples; a short final run joins the
/// previous patient.
pub fn synth_dataset(n_normal: usize, n_anomaly: usize, size: usize, seed: u64) -> Vec<Sample> {
    let n = n_normal + n_anomaly;
    if n == 0 {
        return Vec::new();
    }
    let mut labels: Vec<bool> = (0..n).map(|i| i >= n_normal).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, "synth.order", 0)));
    let n_patients = (n / SYNTH_GROUP_SIZE).max(1);
    let tints: Vec<[f32; 3]> = (0..n_patients)
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "synth.patient", p as u64));
            [0; 3].map(|_| rng.random_range(-0.05..0.05))
        })
        .collect();
    labels
        .par_iter()
        .enumerate()
        .map(|(i, &anomalous)| {
            let patient = (i / SYNTH_GROUP_SIZE).min(n_patients - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "synth.sample", i as u64));
            let (image, kind) = render(&mut rng, size, tints[patient], anomalous);
            Sample {
                image,
                label: if anomalous { Label::Anomaly } else { Label::Normal },
                patient_id: format!("s{seed}-p{patient:03}"),
                source_class: kind.source_class().to_string(),
            }
        })
        .collect()
}

fn render(rng: &mut ChaCha8Rng, size: usize, tint: [f32; 3], anomalous: bool) -> (Image, Kind) {
    let s = size as f32;
    let waves: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f32::consts::TAU);
            let freq = rng.random_range(0.5..2.0) * std::f32::consts::TAU / s;
            (theta.cos() * freq, theta.sin() * freq, rng.random_range(0.0..std::f32::consts::TAU), rng.random_range(0.04..0.09))
        })
        .collect();
    let mut px = vec![[0.0f32; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let shade: f32 = 1.0
                + waves.iter().map(|&(fx, fy, ph, amp)| amp * (fx * x as f32 + fy * y as f32 + ph).sin()).sum::<f32>();
            let p = &mut px[y * size + x];
            for c in 0..3 {
                p[c] = (BASE[c] + tint[c]) * shade + rng.random_range(-0.015..0.015);
            }
        }
    }

    let kind = match (anomalous, rng.random_bool(0.5)) {
        (false, _) => Kind::Normal,
        (true, true) => Kind::Lesion,
        (true, false) => Kind::Specular,
    };
    if kind != Kind::Normal {
        for _ in 0..rng.random_range(1..=3) {
            let (radius, color) = match kind {
                Kind::Lesion => (rng.random_range(0.08..0.16) * s, LESION),
                _ => (rng.random_range(0.05..0.1) * s, SPECULAR),
            };
            let cy = rng.random_range(radius..s - radius);
            let cx = rng.random_range(radius..s - radius);
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt();
                    // Soft edge about one pixel wide.
                    let alpha = 1.0 / (1.0 + ((d - radius) / 0.6).exp());
                    let p = &mut px[y * size + x];
                    for c in 0..3 {
                        p[c] = p[c] * (1.0 - alpha) + color[c] * alpha;
                    }
                }
            }
        }
    }

    let mut data = vec![0.0f32; 3 * size * size];
    for (i, p) in px.iter().enumerate() {
        for c in 0..3 {
            data[c * size * size + i] = p[c].clamp(0.0, 1.0);
        }
    }
    (Image::new(3, size, size, data).expect("valid synthetic image"), kind)
}

/// Hand-written anomaly score: the number of pixels that look like a dark-red
/// lesion (dim and strongly red) or a specular highlight (all channels bright).
pub fn oracle_score(img: &Image) -> f64 {
    let mut count = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (r, g, b) = (img.get(0, y, x), img.get(1, y, x), img.get(2, y, x));
            let lesion = r < 0.6 && r - g > 0.25;
            let specular = r.min(g).min(b) > 0.9;
            count += usize::from(lesion || specular);
        }
    }
    count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Probability that a random anomaly outscores a random normal, ties 1/2.
    fn pairwise_auc(neg: &[f64], pos: &[f64]) -> f64 {
        let mut wins = 0.0;
        for p in pos {
            for n in neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn empty_request_yields_nothing() {
        assert!(synth_dataset(0, 0, 32, 1).is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = synth_dataset(100, 100, 32, 1);
        let b = synth_dataset(100, 100, 32, 1);
        assert_eq!(a, b);
        assert_ne!(a[0].image, synth_dataset(100, 100, 32, 2)[0].image);
    }

    #[test]
    fn counts_classes_and_patients() {
        let s = synth_dataset(30, 25, 16, 4);
        assert_eq!(s.len(), 55);
        assert_eq!(s.iter().filter(|x| x.label == Label::Anomaly).count(), 25);
        let mut per_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, x) in s.iter().enumerate() {
            per_patient.entry(&x.patient_id).or_default().push(i);
            assert_eq!(x.image.shape(), [3, 16, 16]);
            let want = if x.label == Label::Normal { "normal" } else { x.source_class.as_str() };
            assert_eq!(x.source_class, want);
        }
        // 55 samples: two patients, the short tail merged into the second.
        assert_eq!(per_patient.len(), 2);
        for idx in per_patient.values() {
            assert!(idx.len() >= SYNTH_GROUP_SIZE);
            assert!(idx.windows(2).all(|w| w[1] == w[0] + 1));
        }
        assert!(s.iter().all(|x| x.patient_id.starts_with("s4-p")));
    }

    #[test]
    fn oracle_separates_classes() {
        let s = synth_dataset(500, 500, 32, 7);
        let (mut neg, mut pos) = (Vec::new(), Vec::new());
        for x in &s {
            let v = oracle_score(&x.image);
            if x.label == Label::Anomaly { pos.push(v) } else { neg.push(v) }
        }
        let auc = pairwise_auc(&neg, &pos);
        assert!(auc >= 0.95, "{auc}");
    }
}
