mod common;

use distval::classifier::{train, train_parts, train_parts_with_history, Model, TrainConfig, Weighting};
use distval::datamodel::{Dataset, SourceCollection};
use distval::valuation::Valuation;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..20 {
        let err = common::gradient_check(seed, 1e-5);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

fn blobs(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 40;
    let x = Array2::from_shape_fn((n, 2), |(i, _)| {
        let centre = if i % 2 == 0 { -2.0 } else { 2.0 };
        centre + rng.random_range(-1.0..1.0)
    });
    let y = (0..n).map(|i| i % 2).collect();
    Dataset::new(x, y, 2).unwrap()
}

#[test]
fn separable_blobs_are_fit_exactly() {
    let ds = blobs(5);
    let config = TrainConfig {
        learning_rate: 0.5,
        iterations: 500,
        ..TrainConfig::default()
    };
    let model = train_parts(&[(&ds, 1.0)], &config).unwrap();
    let probs = model.predict_proba(ds.features()).unwrap();
    let mut errors = 0;
    for (row, &y) in probs.outer_iter().zip(ds.labels()) {
        let predicted = if row[1] > row[0] { 1 } else { 0 };
        errors += usize::from(predicted != y);
    }
    assert_eq!(errors, 0);
    assert_eq!(model.accuracy(&ds).unwrap(), 1.0);
}

/// Shifted to zero mean and unit variance per column.
fn standardized(ds: &Dataset) -> Dataset {
    let x = ds.features();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let std = x.std_axis(ndarray::Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    ds.with_features((&x - &mean) / &std).unwrap()
}

#[test]
fn loss_is_monotone_at_small_learning_rates() {
    for seed in 0..5 {
        let ds = standardized(&distval::synth::gaussian_mixture(4, 6, 30, 2.0, seed).unwrap());
        let noisy = distval::synth::corrupt_labels(&ds, 0.3, seed).unwrap();
        for lr in [0.01, 0.05, 0.1] {
            let config = TrainConfig {
                learning_rate: lr,
                iterations: 200,
                ..TrainConfig::default()
            };
            let (_, losses) = train_parts_with_history(&[(&ds, 0.7), (&noisy, 0.3)], &config).unwrap();
            for w in losses.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "seed {seed} lr {lr}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn training_is_bit_deterministic() {
    let ds = distval::synth::gaussian_mixture(3, 5, 20, 2.0, 1).unwrap();
    for batch_size in [None, Some(7)] {
        let config = TrainConfig {
            batch_size,
            ..TrainConfig::default()
        };
        let a = train_parts(&[(&ds, 1.0)], &config).unwrap();
        let b = train_parts(&[(&ds, 1.0)], &config).unwrap();
        let same = |x: &Model, y: &Model| {
            x.weights().iter().zip(y.weights()).all(|(p, q)| p.to_bits() == q.to_bits())
                && x.bias().iter().zip(y.bias()).all(|(p, q)| p.to_bits() == q.to_bits())
        };
        assert!(same(&a, &b));
    }
}

#[test]
fn uniform_weighting_equals_uniform_valuation() {
    let ds = distval::synth::gaussian_mixture(3, 4, 30, 2.0, 2).unwrap();
    let sources = distval::synth::split_sources(&ds, 3, 0).unwrap();
    let config = TrainConfig::default().with_iterations(50);
    let a = train(&sources, Weighting::Uniform, &config).unwrap();
    let v = Valuation::uniform(sources.ids()).unwrap();
    let b = train(&sources, Weighting::Valuation(&v), &config).unwrap();
    for (p, q) in a.weights().iter().zip(b.weights()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn predict_proba_example() {
    let model = Model::from_parts(array![[0.0, 3f64.ln()]], array![0.0, 0.0]).unwrap();
    let p = model.predict_proba(array![[1.0]].view()).unwrap();
    assert!((p[[0, 0]] - 0.25).abs() < 1e-12 && (p[[0, 1]] - 0.75).abs() < 1e-12);
}

#[test]
fn collection_training_rejects_foreign_valuation() {
    let ds = distval::synth::gaussian_mixture(2, 2, 10, 2.0, 0).unwrap();
    let sources = SourceCollection::from_pairs([("a", ds.clone()), ("b", ds)]).unwrap();
    let v = Valuation::uniform(vec!["a".into(), "c".into()]).unwrap();
    assert!(train(&sources, Weighting::Valuation(&v), &TrainConfig::default()).is_err());
}
