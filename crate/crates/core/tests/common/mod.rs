//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod naive;

use distval::classifier::{weighted_loss_and_grad, Model, WeightedBatch};
use distval::datamodel::Dataset;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random labeled dataset with standard-normal-ish features.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Dataset {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5));
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    Dataset::new(x, y, c).expect("valid dataset")
}

/// Largest relative error between the analytic gradient of the weighted
/// objective and central differences with step `h`, over all parameters.
pub fn gradient_check(seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, c) = (rng.random_range(1..5), rng.random_range(2..5));
    let parts: Vec<(Dataset, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            let n = rng.random_range(2..12);
            (random_dataset(&mut rng, n, d, c), rng.random_range(0.1..1.0))
        })
        .collect();
    let l2 = rng.random_range(0.0..0.1);
    let w = Array2::from_shape_fn((d, c), |_| rng.random_range(-1.0..1.0));
    let b = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));
    let loss = |w: &Array2<f64>, b: &Array1<f64>| {
        let model = Model::from_parts(w.clone(), b.clone()).unwrap();
        let batches: Vec<_> = parts.iter().map(|(ds, wt)| WeightedBatch::new(ds, *wt)).collect();
        weighted_loss_and_grad(&model, &batches, l2).unwrap()
    };
    let (_, gw, gb) = loss(&w, &b);
    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..c {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[[i, j]] += h;
            down[[i, j]] -= h;
            let numeric = (loss(&up, &b).0 - loss(&down, &b).0) / (2.0 * h);
            worst = worst.max(rel(gw[[i, j]], numeric));
        }
    }
    for j in 0..c {
        let (mut up, mut down) = (b.clone(), b.clone());
        up[j] += h;
        down[j] -= h;
        let numeric = (loss(&w, &up).0 - loss(&w, &down).0) / (2.0 * h);
        worst = worst.max(rel(gb[j], numeric));
    }
    worst
}
