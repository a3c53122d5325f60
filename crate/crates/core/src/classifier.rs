//! Multinomial softmax regression trained by full-batch gradient descent.
//!
//! This one model family plays every role in the pipeline: the per-source
//! "small model" scored by a transferability measure, the universal model
//! used to value augmentors, and the final model trained on the weighted
//! source mixture
//!
//! ```text
//! loss(θ) = Σ_s w_s · (1/n_s) Σ_i ce(θ; x_si, y_si) + (l2/2)·‖θ‖²
//! ```
//!
//! Training starts from all-zero parameters and is fully deterministic.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, SourceCollection};
use crate::error::{ensure, Error, Result};
use crate::valuation::Valuation;

/// Linear softmax classifier: `p(y | x) = softmax(x·W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// JSON form of a [`Model`]: `{d, C, weights (row-major d×C), bias}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub d: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Model {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            weights: Array2::zeros((feature_dim, num_classes)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        ensure!(
            weights.ncols() == bias.len(),
            DimensionMismatch,
            "weights have {} columns but bias has {} entries",
            weights.ncols(),
            bias.len()
        );
        ensure!(
            weights.ncols() >= 2 && weights.nrows() >= 1,
            InvalidArgument,
            "model needs d >= 1 and C >= 2"
        );
        ensure!(
            weights.iter().chain(bias.iter()).all(|v| v.is_finite()),
            InvalidArgument,
            "model parameters must be finite"
        );
        Ok(Self { weights, bias })
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    fn check_dim(&self, features: &ArrayView2<'_, f64>) -> Result<()> {
        ensure!(
            features.ncols() == self.feature_dim(),
            DimensionMismatch,
            "model expects {} features, input has {}",
            self.feature_dim(),
            features.ncols()
        );
        Ok(())
    }

    /// Pre-softmax logits `x·W + b`, one row per sample. These double as the
    /// extracted feature map for the feature-based transferability measures.
    pub fn extract_features(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(&features)?;
        Ok(features.dot(&self.weights) + &self.bias)
    }

    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut logits = self.extract_features(features)?;
        softmax_rows_in_place(&mut logits);
        Ok(logits)
    }

    /// Fraction of rows whose most probable class equals the label. Ties go
    /// to the smallest class index.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        let probs = self.predict_proba(dataset.features())?;
        let correct = probs
            .outer_iter()
            .zip(dataset.labels())
            .filter(|(row, &label)| argmax(row.iter().copied()) == label)
            .count();
        Ok(correct as f64 / dataset.len() as f64)
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            d: self.feature_dim(),
            num_classes: self.num_classes(),
            weights: self.weights.iter().copied().collect(),
            bias: self.bias.to_vec(),
        }
    }

    pub fn from_record(record: &ModelRecord) -> Result<Self> {
        let weights = Array2::from_shape_vec((record.d, record.num_classes), record.weights.clone())
            .map_err(|e| Error::Format(format!("model weights: {e}")))?;
        Model::from_parts(weights, Array1::from(record.bias.clone()))
    }
}

impl Serialize for Model {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Model {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let record = ModelRecord::deserialize(d)?;
        Model::from_record(&record).map_err(serde::de::Error::custom)
    }
}

/// First index of the maximum; NaN entries never win.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows_in_place(logits: &mut Array2<f64>) {
    for mut row in logits.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
}

/// Hyper-parameters for gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Drives row sampling when `batch_size` is set; unused for full batches.
    pub seed: u64,
    /// Rows drawn per source per iteration. `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 300,
            l2: 1e-4,
            seed: 0,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            InvalidArgument,
            "learning rate must be positive, got {}",
            self.learning_rate
        );
        ensure!(
            self.l2 >= 0.0 && self.l2.is_finite(),
            InvalidArgument,
            "l2 must be nonnegative, got {}",
            self.l2
        );
        ensure!(
            self.batch_size != Some(0),
            InvalidArgument,
            "batch size must be positive"
        );
        Ok(())
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }
}

/// How source losses are mixed in the training objective.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    Uniform,
    Valuation(&'a Valuation),
}

/// One term of the weighted objective: a batch and its mixture weight.
#[derive(Debug, Clone, Copy)]
pub struct WeightedBatch<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub weight: f64,
}

impl<'a> WeightedBatch<'a> {
    pub fn new(dataset: &'a Dataset, weight: f64) -> Self {
        Self {
            features: dataset.features(),
            labels: dataset.labels(),
            weight,
        }
    }
}

/// Value and gradient of the weighted objective at `model`.
pub fn weighted_loss_and_grad(
    model: &Model,
    batches: &[WeightedBatch<'_>],
    l2: f64,
) -> Result<(f64, Array2<f64>, Array1<f64>)> {
    let mut grad_w = &model.weights * l2;
    let mut grad_b = &model.bias * l2;
    let mut loss = 0.5
        * l2
        * (model.weights.iter().map(|v| v * v).sum::<f64>()
            + model.bias.iter().map(|v| v * v).sum::<f64>());
    for batch in batches {
        if batch.weight == 0.0 {
            continue;
        }
        ensure!(
            batch.labels.len() == batch.features.nrows() && !batch.labels.is_empty(),
            DimensionMismatch,
            "batch has {} rows but {} labels",
            batch.features.nrows(),
            batch.labels.len()
        );
        let scale = batch.weight / batch.labels.len() as f64;
        let mut residual = model.extract_features(batch.features)?;
        let mut batch_loss = 0.0;
        for (mut row, &label) in residual.outer_iter_mut().zip(batch.labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let log_norm = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            batch_loss += log_norm - row[label];
            row.mapv_inplace(|v| (v - log_norm).exp());
            row[label] -= 1.0;
        }
        loss += scale * batch_loss;
        grad_w.scaled_add(scale, &batch.features.t().dot(&residual));
        grad_b.scaled_add(scale, &residual.sum_axis(Axis(0)));
    }
    Ok((loss, grad_w, grad_b))
}

/// Incremental gradient-descent driver. [`train`] runs it over a fixed set
/// of batches; callers that transform inputs between steps (augmented
/// training) drive it one step at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    iteration: usize,
    losses: Vec<f64>,
}

impl Trainer {
    pub fn new(feature_dim: usize, num_classes: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: Model::zeros(feature_dim, num_classes),
            config,
            iteration: 0,
            losses: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// One descent step; returns the objective before the update.
    pub fn step(&mut self, batches: &[WeightedBatch<'_>]) -> Result<f64> {
        let (loss, grad_w, grad_b) = weighted_loss_and_grad(&self.model, batches, self.config.l2)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
            });
        }
        let lr = self.config.learning_rate;
        self.model.weights.scaled_add(-lr, &grad_w);
        self.model.bias.scaled_add(-lr, &grad_b);
        if !self.model.weights.iter().chain(self.model.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                iteration: self.iteration,
            });
        }
        self.iteration += 1;
        self.losses.push(loss);
        Ok(loss)
    }

    /// Objective value recorded before each step taken so far.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn finish(self) -> Model {
        self.model
    }
}

/// Trains on `(dataset, weight)` terms with the configured schedule.
pub fn train_parts(parts: &[(&Dataset, f64)], config: &TrainConfig) -> Result<Model> {
    train_parts_with_history(parts, config).map(|(m, _)| m)
}

/// As [`train_parts`], also returning the per-iteration objective.
pub fn train_parts_with_history(
    parts: &[(&Dataset, f64)],
    config: &TrainConfig,
) -> Result<(Model, Vec<f64>)> {
    let (first, _) = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training data".into()))?;
    for (ds, w) in parts {
        ensure!(
            ds.dim() == first.dim() && ds.num_classes() == first.num_classes(),
            DimensionMismatch,
            "training parts disagree on d or C"
        );
        ensure!(
            *w >= 0.0 && w.is_finite(),
            InvalidArgument,
            "mixture weight must be finite and nonnegative, got {w}"
        );
    }
    let mut trainer = Trainer::new(first.dim(), first.num_classes(), config.clone())?;
    match config.batch_size {
        None => {
            let batches: Vec<_> = parts.iter().map(|(ds, w)| WeightedBatch::new(ds, *w)).collect();
            for _ in 0..config.iterations {
                trainer.step(&batches)?;
            }
        }
        Some(size) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for _ in 0..config.iterations {
                let drawn: Vec<(Array2<f64>, Vec<usize>, f64)> = parts
                    .iter()
                    .map(|(ds, w)| {
                        let rows = sample(&mut rng, ds.len(), size.min(ds.len())).into_vec();
                        let x = ds.features().select(Axis(0), &rows);
                        let y = rows.iter().map(|&i| ds.labels()[i]).collect();
                        (x, y, *w)
                    })
                    .collect();
                let batches: Vec<_> = drawn
                    .iter()
                    .map(|(x, y, w)| WeightedBatch {
                        features: x.view(),
                        labels: y,
                        weight: *w,
                    })
                    .collect();
                trainer.step(&batches)?;
            }
        }
    }
    let losses = trainer.losses().to_vec();
    Ok((trainer.finish(), losses))
}

/// Trains on a source collection mixed by `weighting`.
pub fn train(sources: &SourceCollection, weighting: Weighting<'_>, config: &TrainConfig) -> Result<Model> {
    let weights = resolve_weights(sources, weighting)?;
    let parts: Vec<(&Dataset, f64)> = sources.datasets().zip(weights).collect();
    train_parts(&parts, config)
}

fn resolve_weights(sources: &SourceCollection, weighting: Weighting<'_>) -> Result<Vec<f64>> {
    match weighting {
        Weighting::Uniform => Ok(vec![1.0 / sources.len() as f64; sources.len()]),
        Weighting::Valuation(v) => {
            ensure!(
                v.source_ids() == sources.ids().as_slice(),
                DimensionMismatch,
                "valuation covers sources {:?}, collection has {:?}",
                v.source_ids(),
                sources.ids()
            );
            Ok(v.posterior().to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_dataset(n: usize, d: usize, c: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| rng.random_range(0..c)).collect();
        Dataset::new(x, y, c).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Model::zeros(3, 4);
        let p = m.predict_proba(array![[1.0, -2.0, 3.0], [0.0, 0.0, 0.0]].view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(m.extract_features(array![[5.0, 6.0, 7.0]].view()).unwrap(), array![[0.0; 4]]);
    }

    #[test]
    fn known_probabilities() {
        let m = Model::from_parts(array![[0.0, 3f64.ln()]], array![0.0, 0.0]).unwrap();
        let p = m.predict_proba(array![[1.0]].view()).unwrap();
        assert!((p[[0, 0]] - 0.25).abs() < 1e-15 && (p[[0, 1]] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn identity_weights_give_logits() {
        let m = Model::from_parts(Array2::eye(2), array![0.0, 0.0]).unwrap();
        assert_eq!(m.extract_features(array![[1.0, 2.0]].view()).unwrap(), array![[1.0, 2.0]]);
    }

    #[test]
    fn logit_shift_leaves_probabilities_unchanged() {
        let x = array![[0.3, -1.2], [2.0, 0.5]];
        let w = array![[1.0, -0.5, 0.2], [0.1, 0.4, -0.3]];
        let a = Model::from_parts(w.clone(), array![0.0, 0.1, 0.2]).unwrap();
        let b = Model::from_parts(w, array![7.0, 7.1, 7.2]).unwrap();
        let (pa, pb) = (a.predict_proba(x.view()).unwrap(), b.predict_proba(x.view()).unwrap());
        assert!(pa.iter().zip(pb.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
    }

    #[test]
    fn softmax_of_features_matches_predict_proba() {
        let ds = random_dataset(15, 4, 3, 1);
        let m = train_parts(&[(&ds, 1.0)], &TrainConfig::default().with_iterations(20)).unwrap();
        let mut f = m.extract_features(ds.features()).unwrap();
        softmax_rows_in_place(&mut f);
        let p = m.predict_proba(ds.features()).unwrap();
        assert!(f.iter().zip(p.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
        assert!(p.outer_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn accuracy_tie_breaks_to_smallest_class() {
        let ds = Dataset::new(array![[1.0], [2.0]], vec![0, 0], 3).unwrap();
        assert_eq!(Model::zeros(1, 3).accuracy(&ds).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_counts_correct_rows() {
        // logits are (x, -x): positive x predicts class 0.
        let m = Model::from_parts(array![[1.0, -1.0]], array![0.0, 0.0]).unwrap();
        let ds = Dataset::new(array![[1.0], [2.0], [-1.0], [3.0]], vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy(&ds).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_matches_loop_oracle() {
        let ds = random_dataset(20, 3, 4, 9);
        let m = train_parts(&[(&ds, 1.0)], &TrainConfig::default().with_iterations(15)).unwrap();
        let mut errors = 0;
        for (i, x) in ds.features().outer_iter().enumerate() {
            let mut best = 0;
            let mut best_logit = f64::NEG_INFINITY;
            for c in 0..4 {
                let logit: f64 =
                    (0..3).map(|j| x[j] * m.weights()[[j, c]]).sum::<f64>() + m.bias()[c];
                if logit > best_logit {
                    best_logit = logit;
                    best = c;
                }
            }
            if best != ds.labels()[i] {
                errors += 1;
            }
        }
        assert_eq!(m.accuracy(&ds).unwrap(), 1.0 - errors as f64 / 20.0);
    }

    #[test]
    fn zero_iterations_give_zero_model() {
        let ds = random_dataset(5, 2, 3, 2);
        let m = train_parts(&[(&ds, 1.0)], &TrainConfig::default().with_iterations(0)).unwrap();
        assert_eq!(m, Model::zeros(2, 3));
    }

    #[test]
    fn one_hot_weights_match_single_source_training() {
        let a = random_dataset(12, 3, 3, 3);
        let b = random_dataset(9, 3, 3, 4);
        let both = SourceCollection::from_pairs([("a", a.clone()), ("b", b)]).unwrap();
        let only_a = SourceCollection::from_pairs([("a", a)]).unwrap();
        let cfg = TrainConfig::default().with_iterations(40);
        let v = Valuation::point_mass(both.ids(), 0).unwrap();
        let m1 = train(&both, Weighting::Valuation(&v), &cfg).unwrap();
        let m2 = train(&only_a, Weighting::Uniform, &cfg).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn mismatched_valuation_is_rejected() {
        let a = random_dataset(4, 2, 2, 5);
        let sources = SourceCollection::from_pairs([("a", a.clone()), ("b", a)]).unwrap();
        let v = Valuation::point_mass(vec!["a".into(), "c".into()], 0).unwrap();
        assert!(matches!(
            train(&sources, Weighting::Valuation(&v), &TrainConfig::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let mut ds = random_dataset(10, 2, 2, 6);
        ds = ds.with_features(ds.features().mapv(|v| v * 1e200)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            ..TrainConfig::default()
        };
        assert!(matches!(train_parts(&[(&ds, 1.0)], &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn json_record_round_trip() {
        let m = Model::from_parts(array![[1.5, -2.0], [0.25, 3.0]], array![0.1, -0.1]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"C\":2"));
        let back: Model = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
