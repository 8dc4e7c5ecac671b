//! Central finite-difference verification of the reverse pass.
//!
//! Each case draws random small inputs from a seed, contracts the op's output
//! with a fixed random cotangent, and compares the recorded gradient of every
//! input against `(f(x + h) - f(x - h)) / 2h`. The numeric side only ever runs
//! forward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Result, Tensor, Var};

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-4;

/// Every differentiable op exercised by [`check`].
pub const OPS: &[&str] = &[
    "conv2d",
    "depthwise_conv2d",
    "dense",
    "relu",
    "hardswish",
    "sigmoid",
    "global_avg_pool",
    "upsample_nearest",
    "batchnorm_inference_affine",
    "channel_scale",
    "add",
    "mul",
    "scale",
    "concat",
    "sum",
    "mean",
    "mse_loss",
    "anomaly_prob",
    "ce_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub op: &'static str,
    pub seed: u64,
    /// `‖analytic - numeric‖₂ / max(‖analytic‖₂ + ‖numeric‖₂, 1e-12)` over all inputs.
    pub rel_error: f64,
    pub n_checked: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Domain {
    Free,
    /// Keep values at least 0.05 away from these kinks.
    AvoidKinks(&'static [f64]),
    Probability,
}

struct Case {
    inputs: Vec<(Vec<usize>, Domain)>,
    build: Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>,
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize], domain: Domain) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n)
        .map(|_| match domain {
            Domain::Free => rng.random_range(-1.5..1.5),
            Domain::Probability => rng.random_range(0.05..0.95),
            Domain::AvoidKinks(kinks) => loop {
                let v: f64 = rng.random_range(-4.5..4.5);
                if kinks.iter().all(|k| (v - k).abs() > 0.05) {
                    break v;
                }
            },
        })
        .collect()
}

fn case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let h = rng.random_range(3..=6);
    let w = rng.random_range(3..=6);
    let free = Domain::Free;
    match op {
        "conv2d" => {
            let k = [1, 3][rng.random_range(0..2)];
            let stride = rng.random_range(1..=2);
            let pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
            let oc = rng.random_range(1..=3);
            let bias = rng.random_bool(0.5);
            let mut inputs = vec![(vec![n, c, h, w], free), (vec![oc, c, k, k], free)];
            if bias {
                inputs.push((vec![oc], free));
            }
            Case { inputs, build: Box::new(move |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad)) }
        }
        "depthwise_conv2d" => {
            let k = [3, 5][rng.random_range(0..2)];
            let stride = rng.random_range(1..=2);
            let pad = k / 2;
            let inputs = vec![(vec![n, c, h, w], free), (vec![c, 1, k, k], free), (vec![c], free)];
            Case { inputs, build: Box::new(move |g, v| g.depthwise_conv2d(v[0], v[1], Some(v[2]), stride, pad)) }
        }
        "dense" => {
            let (fin, fout) = (rng.random_range(1..=6), rng.random_range(1..=4));
            let inputs = vec![(vec![n, fin], free), (vec![fout, fin], free), (vec![fout], free)];
            Case { inputs, build: Box::new(|g, v| g.dense(v[0], v[1], Some(v[2]))) }
        }
        "relu" => Case {
            inputs: vec![(vec![n, c, h], Domain::AvoidKinks(&[0.0]))],
            build: Box::new(|g, v| g.relu(v[0])),
        },
        "hardswish" => Case {
            inputs: vec![(vec![n, c, h], Domain::AvoidKinks(&[-3.0, 3.0]))],
            build: Box::new(|g, v| g.hardswish(v[0])),
        },
        "sigmoid" => Case { inputs: vec![(vec![n, c, h], free)], build: Box::new(|g, v| g.sigmoid(v[0])) },
        "global_avg_pool" => Case {
            inputs: vec![(vec![n, c, h, w], free)],
            build: Box::new(|g, v| g.global_avg_pool(v[0])),
        },
        "upsample_nearest" => {
            let f = rng.random_range(1..=3);
            Case { inputs: vec![(vec![n, c, h, w], free)], build: Box::new(move |g, v| g.upsample_nearest(v[0], f)) }
        }
        "batchnorm_inference_affine" => Case {
            inputs: vec![(vec![n, c, h, w], free), (vec![c], free), (vec![c], free)],
            build: Box::new(|g, v| g.affine(v[0], v[1], v[2])),
        },
        "channel_scale" => Case {
            inputs: vec![(vec![n, c, h, w], free), (vec![n, c], free)],
            build: Box::new(|g, v| g.channel_scale(v[0], v[1])),
        },
        "add" => Case { inputs: vec![(vec![n, c, h], free); 2], build: Box::new(|g, v| g.add(v[0], v[1])) },
        "mul" => Case { inputs: vec![(vec![n, c, h], free); 2], build: Box::new(|g, v| g.mul(v[0], v[1])) },
        "scale" => {
            let f: f64 = rng.random_range(-2.0..2.0);
            Case { inputs: vec![(vec![n, c], free)], build: Box::new(move |g, v| g.scale(v[0], f)) }
        }
        "concat" => {
            let c2 = rng.random_range(1..=3);
            Case {
                inputs: vec![(vec![n, c, h, w], free), (vec![n, c2, h, w], free)],
                build: Box::new(|g, v| g.concat(&[v[0], v[1]], 1)),
            }
        }
        "sum" => Case { inputs: vec![(vec![n, c, h], free)], build: Box::new(|g, v| g.sum(v[0])) },
        "mean" => Case { inputs: vec![(vec![n, c, h], free)], build: Box::new(|g, v| g.mean(v[0])) },
        "mse_loss" => Case { inputs: vec![(vec![n, c, h], free); 2], build: Box::new(|g, v| g.mse(v[0], v[1])) },
        "anomaly_prob" => Case { inputs: vec![(vec![n + 2, 2], free)], build: Box::new(|g, v| g.anomaly_prob(v[0])) },
        "ce_loss" => {
            let rows = n + 3;
            let targets: Vec<f64> = (0..rows).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect();
            let mask: Vec<bool> = (0..rows).map(|i| i == 0 || rng.random_bool(0.7)).collect();
            Case {
                inputs: vec![(vec![rows], Domain::Probability)],
                build: Box::new(move |g, v| g.bce(v[0], &targets, Some(&mask))),
            }
        }
        other => panic!("unknown op {other}"),
    }
}

/// Contracts `out` with the cotangent so the check covers the full Jacobian.
fn contracted_loss(g: &mut Graph<f64>, out: Var, cot: &[f64]) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let r = g.constant(Tensor::new(shape, cot.to_vec())?);
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

fn evaluate(case: &Case, values: &[Vec<f64>], cot: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .zip(values)
        .map(|((s, _), v)| Tensor::new(s.clone(), v.clone()).map(|t| g.constant(t)))
        .collect::<Result<_>>()?;
    let out = (case.build)(&mut g, &vars)?;
    let loss = contracted_loss(&mut g, out, cot)?;
    Ok(g.value(loss).item().expect("scalar"))
}

/// Runs one finite-difference check of `op` on inputs drawn from `seed`.
pub fn check(op: &'static str, seed: u64) -> Result<GradCheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let case = case(op, &mut rng);
    let values: Vec<Vec<f64>> = case.inputs.iter().map(|(s, d)| draw(&mut rng, s, *d)).collect();

    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .zip(&values)
        .map(|((s, _), v)| Tensor::new(s.clone(), v.clone()).map(|t| g.leaf(t.with_grad(true))))
        .collect::<Result<_>>()?;
    let out = (case.build)(&mut g, &vars)?;
    let cot: Vec<f64> = (0..g.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = contracted_loss(&mut g, out, &cot)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            let t = g.take(v);
            t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();

    let (mut diff2, mut a2, mut n2, mut n_checked) = (0.0, 0.0, 0.0, 0);
    let mut probe = values.clone();
    for (i, vals) in values.iter().enumerate() {
        for j in 0..vals.len() {
            probe[i][j] = vals[j] + FD_STEP;
            let up = evaluate(&case, &probe, &cot)?;
            probe[i][j] = vals[j] - FD_STEP;
            let down = evaluate(&case, &probe, &cot)?;
            probe[i][j] = vals[j];
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[i][j];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            n_checked += 1;
        }
    }
    let rel_error = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12);
    Ok(GradCheckResult { op, seed, rel_error, n_checked })
}
