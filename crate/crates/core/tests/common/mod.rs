//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use damper_twin::mlp::INPUTS;
use damper_twin::{Activation, MlpConfig, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Batch = Vec<([f64; INPUTS], f64)>;

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
    (0..n)
        .map(|_| {
            (
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

/// Central differences of the batch loss with respect to every parameter.
fn numeric_gradient(model: &MlpModel, batch: &Batch, h: f64) -> Vec<f64> {
    let base = model.parameters();
    let mut probe = model.clone();
    (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_parameters(&p).unwrap();
            let up = probe.loss(batch);
            p[k] = base[k] - h;
            probe.set_parameters(&p).unwrap();
            let down = probe.loss(batch);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        0.0
    } else {
        diff / norm
    }
}

/// Worst per-layer (weights and biases separately) relative error between
/// backprop and finite differences.
pub fn gradient_check(sizes: &[usize], activation: Activation, seed: u64) -> f64 {
    let cfg = MlpConfig {
        layer_sizes: sizes.to_vec(),
        activation,
        seed,
        ..Default::default()
    };
    let mut model = MlpModel::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    // non-zero biases so every parameter gets exercised
    let mut params = model.parameters();
    for p in &mut params {
        *p += rng.random_range(-0.1..0.1);
    }
    model.set_parameters(&params).unwrap();
    let batch = random_batch(&mut rng, 8);

    let analytic = model.backward(&batch).unwrap();
    let numeric = numeric_gradient(&model, &batch, 1e-5);

    let mut offset = 0;
    let mut worst: f64 = 0.0;
    for l in &analytic.layers {
        for part in [&l.weights, &l.biases] {
            let n = part.len();
            worst = worst.max(relative_error(part, &numeric[offset..offset + n]));
            offset += n;
        }
    }
    worst
}

/// Independent evaluation of MSE, MAE and R²: index loops, reverse
/// accumulation order, residuals squared via multiplication of a copy.
pub fn brute_force(y: &[f64], p: &[f64]) -> (f64, f64, f64) {
    let n = y.len();
    let mut total = 0.0;
    for i in (0..n).rev() {
        total += y[i];
    }
    let mu = total / n as f64;
    let (mut sq, mut ab, mut tot) = (0.0, 0.0, 0.0);
    for i in (0..n).rev() {
        let r = p[i] - y[i];
        sq += r * r;
        ab += if r < 0.0 { -r } else { r };
        let c = y[i] - mu;
        tot += c * c;
    }
    (sq / n as f64, ab / n as f64, 1.0 - sq / tot)
}

