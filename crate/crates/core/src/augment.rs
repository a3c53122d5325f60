//! Label-preserving augmentors on feature vectors, magnitude
//! discretization, and training under a distribution over augmentors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::{Model, TrainConfig, Trainer, WeightedBatch};
use crate::datamodel::Dataset;
use crate::error::{ensure, Error, Result};
use crate::valuation::Valuation;

/// Transformation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Identity,
    /// Adds `N(0, α²)` noise to every entry.
    AddGaussianNoise,
    /// Multiplies every entry by `α`.
    Scale,
    /// Rotates the plane spanned by two coordinate axes by `α` degrees.
    RotatePlane,
    /// Zeroes each entry independently with probability `α`.
    FeatureDropout,
}

impl Operator {
    pub const ALL: [Operator; 5] = [
        Operator::Identity,
        Operator::AddGaussianNoise,
        Operator::Scale,
        Operator::RotatePlane,
        Operator::FeatureDropout,
    ];

    /// Declared magnitude range, inclusive.
    pub fn range(self) -> (f64, f64) {
        match self {
            Operator::Identity => (0.0, 0.0),
            Operator::AddGaussianNoise => (0.0, 100.0),
            Operator::Scale => (0.0, 10.0),
            Operator::RotatePlane => (-180.0, 180.0),
            Operator::FeatureDropout => (0.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Identity => "identity",
            Operator::AddGaussianNoise => "add_gaussian_noise",
            Operator::Scale => "scale",
            Operator::RotatePlane => "rotate_plane",
            Operator::FeatureDropout => "feature_dropout",
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Operator::Identity),
            "add_gaussian_noise" | "gaussian_noise" | "noise" => Ok(Operator::AddGaussianNoise),
            "scale" => Ok(Operator::Scale),
            "rotate_plane" | "rotate" => Ok(Operator::RotatePlane),
            "feature_dropout" | "dropout" => Ok(Operator::FeatureDropout),
            other => Err(Error::InvalidArgument(format!("unknown operator {other:?}"))),
        }
    }
}

/// An operator with a fixed magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentor {
    pub operator: Operator,
    pub magnitude: f64,
    /// Rotation plane for [`Operator::RotatePlane`].
    #[serde(default = "default_axes")]
    pub axes: (usize, usize),
}

fn default_axes() -> (usize, usize) {
    (0, 1)
}

impl Augmentor {
    pub fn new(operator: Operator, magnitude: f64) -> Result<Self> {
        let aug = Self {
            operator,
            magnitude,
            axes: default_axes(),
        };
        aug.validate()?;
        Ok(aug)
    }

    pub fn identity() -> Self {
        Self {
            operator: Operator::Identity,
            magnitude: 0.0,
            axes: default_axes(),
        }
    }

    pub fn rotate_plane(degrees: f64, axes: (usize, usize)) -> Result<Self> {
        let aug = Self {
            operator: Operator::RotatePlane,
            magnitude: degrees,
            axes,
        };
        aug.validate()?;
        Ok(aug)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.operator.range();
        ensure!(
            self.magnitude >= lo && self.magnitude <= hi,
            InvalidArgument,
            "{} magnitude {} outside [{lo}, {hi}]",
            self.operator,
            self.magnitude
        );
        ensure!(
            self.operator != Operator::RotatePlane || self.axes.0 != self.axes.1,
            InvalidArgument,
            "rotation axes must differ"
        );
        Ok(())
    }

    /// Transforms every row. Deterministic given `seed`; the seed is
    /// ignored by deterministic operators.
    pub fn apply(&self, features: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<f64>> {
        self.validate()?;
        let mut out = features.to_owned();
        match self.operator {
            Operator::Identity => {}
            Operator::AddGaussianNoise => {
                if self.magnitude > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for v in out.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += self.magnitude * z;
                    }
                }
            }
            Operator::Scale => out.mapv_inplace(|v| v * self.magnitude),
            Operator::RotatePlane => {
                let (i, j) = self.axes;
                ensure!(
                    i < out.ncols() && j < out.ncols(),
                    DimensionMismatch,
                    "rotation axes ({i}, {j}) need at least {} features, got {}",
                    i.max(j) + 1,
                    out.ncols()
                );
                let (sin, cos) = self.magnitude.to_radians().sin_cos();
                for mut row in out.outer_iter_mut() {
                    let (a, b) = (row[i], row[j]);
                    row[i] = cos * a - sin * b;
                    row[j] = sin * a + cos * b;
                }
            }
            Operator::FeatureDropout => {
                if self.magnitude > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for v in out.iter_mut() {
                        if rng.random::<f64>() < self.magnitude {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Augmentor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.operator {
            Operator::Identity => f.write_str("identity"),
            Operator::RotatePlane => write!(f, "rotate_plane({}, {})@{}", self.axes.0, self.axes.1, self.magnitude),
            op => write!(f, "{op}@{}", self.magnitude),
        }
    }
}

/// `k` augmentors with magnitudes evenly spaced over `[lo, hi]`, endpoints
/// included. `k = 1` gives the midpoint.
pub fn discretize(operator: Operator, lo: f64, hi: f64, k: usize) -> Result<Vec<Augmentor>> {
    ensure!(lo.is_finite() && hi.is_finite() && lo <= hi, InvalidArgument, "invalid range [{lo}, {hi}]");
    ensure!(k >= 1, InvalidArgument, "k must be at least 1");
    let magnitudes: Vec<f64> = if k == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..k)
            .map(|i| {
                if i == k - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (k - 1) as f64
                }
            })
            .collect()
    };
    magnitudes.into_iter().map(|m| Augmentor::new(operator, m)).collect()
}

/// One entry of an augmentor-set file: an operator with either a fixed
/// magnitude or a range discretized into `k` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentorSpec {
    pub operator: Operator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<(usize, usize)>,
}

impl AugmentorSpec {
    pub fn expand(&self) -> Result<Vec<Augmentor>> {
        let mut augs = match (self.operator, self.range, self.magnitude) {
            (Operator::Identity, None, None) => vec![Augmentor::identity()],
            (op, Some((lo, hi)), None) => discretize(op, lo, hi, self.k.unwrap_or(5))?,
            (op, None, Some(m)) => vec![Augmentor::new(op, m)?],
            (op, _, _) => {
                return Err(Error::InvalidArgument(format!(
                    "{op}: give exactly one of range or magnitude"
                )))
            }
        };
        if let Some(axes) = self.axes {
            for a in &mut augs {
                a.axes = axes;
                a.validate()?;
            }
        }
        Ok(augs)
    }
}

/// Parses a JSON array of [`AugmentorSpec`] and expands it in order.
pub fn parse_augmentor_specs(json: &str) -> Result<Vec<Augmentor>> {
    let specs: Vec<AugmentorSpec> =
        serde_json::from_str(json).map_err(|e| Error::Format(format!("augmentor spec: {e}")))?;
    ensure!(!specs.is_empty(), InvalidArgument, "augmentor spec is empty");
    let mut out = Vec::new();
    for spec in &specs {
        out.extend(spec.expand()?);
    }
    Ok(out)
}

pub fn load_augmentor_specs(path: impl AsRef<Path>) -> Result<Vec<Augmentor>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_augmentor_specs(&text)
}

/// The augmentor set used by the augmentation experiments: identity plus
/// five magnitudes each of noise, scaling and dropout.
pub fn default_augmentor_set() -> Vec<Augmentor> {
    let mut set = vec![Augmentor::identity()];
    set.extend(discretize(Operator::AddGaussianNoise, 0.1, 10.0, 5).expect("valid range"));
    set.extend(discretize(Operator::Scale, 0.5, 2.0, 5).expect("valid range"));
    set.extend(discretize(Operator::FeatureDropout, 0.0, 0.5, 5).expect("valid range"));
    set
}

/// Seeded sampler of augmentor indices drawn from a valuation's posterior.
#[derive(Debug, Clone)]
pub struct AugmentorSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl AugmentorSampler {
    pub fn new(valuation: &Valuation, seed: u64) -> Result<Self> {
        let p = valuation.posterior();
        let total: f64 = p.iter().sum();
        ensure!(
            (total - 1.0).abs() <= 1e-9,
            InvalidArgument,
            "valuation sums to {total}, expected 1"
        );
        let dist = WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(format!("posterior: {e}")))?;
        Ok(Self {
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_index(&mut self) -> usize {
        self.dist.sample(&mut self.rng)
    }

    /// A fresh seed for a random operator.
    pub fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Draws one augmentor with probability given by the posterior.
pub fn sample_augmentor<'a>(augmentors: &'a [Augmentor], valuation: &Valuation, seed: u64) -> Result<&'a Augmentor> {
    ensure!(
        augmentors.len() == valuation.len(),
        DimensionMismatch,
        "{} augmentors, valuation over {}",
        augmentors.len(),
        valuation.len()
    );
    let mut sampler = AugmentorSampler::new(valuation, seed)?;
    Ok(&augmentors[sampler.next_index()])
}

/// When a fresh augmentor is drawn during training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingGranularity {
    /// One augmentor for the whole batch.
    #[default]
    PerBatch,
    /// One augmentor per row.
    PerImage,
}

impl FromStr for SamplingGranularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "per_batch" | "batch" => Ok(SamplingGranularity::PerBatch),
            "per_image" | "per_row" | "row" => Ok(SamplingGranularity::PerImage),
            other => Err(Error::InvalidArgument(format!("unknown sampling granularity {other:?}"))),
        }
    }
}

const AUGMENT_STREAM: u64 = 0x6175_676d_656e_7421;

/// Trains on `train_set` with inputs transformed by augmentors drawn from
/// `valuation` at every step. Each step minimizes the mean cross-entropy
/// over the (transformed) batch; with `config.batch_size` unset the batch
/// is the whole training set.
///
/// Row subsampling uses the same random stream as plain training, so a
/// point mass on the identity reproduces [`crate::classifier::train_parts`]
/// exactly.
pub fn train_augmented(
    train_set: &Dataset,
    augmentors: &[Augmentor],
    valuation: &Valuation,
    config: &TrainConfig,
    granularity: SamplingGranularity,
) -> Result<Model> {
    ensure!(!augmentors.is_empty(), InvalidArgument, "no augmentors");
    ensure!(
        augmentors.len() == valuation.len(),
        DimensionMismatch,
        "{} augmentors, valuation over {}",
        augmentors.len(),
        valuation.len()
    );
    let mut trainer = Trainer::new(train_set.dim(), train_set.num_classes(), config.clone())?;
    let mut sampler = AugmentorSampler::new(valuation, config.seed ^ AUGMENT_STREAM)?;
    let mut row_rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.iterations {
        let (x, y): (Array2<f64>, Vec<usize>) = match config.batch_size {
            None => (train_set.features().to_owned(), train_set.labels().to_vec()),
            Some(size) => {
                let rows = sample(&mut row_rng, train_set.len(), size.min(train_set.len())).into_vec();
                let x = train_set.features().select(Axis(0), &rows);
                (x, rows.iter().map(|&i| train_set.labels()[i]).collect())
            }
        };
        let x = match granularity {
            SamplingGranularity::PerBatch => {
                let aug = &augmentors[sampler.next_index()];
                aug.apply(x.view(), sampler.next_seed())?
            }
            SamplingGranularity::PerImage => {
                let mut out = x;
                for mut row in out.outer_iter_mut() {
                    let aug = &augmentors[sampler.next_index()];
                    let seed = sampler.next_seed();
                    let single = row.view().insert_axis(Axis(0));
                    let t = aug.apply(single, seed)?;
                    row.assign(&t.row(0));
                }
                out
            }
        };
        trainer.step(&[WeightedBatch {
            features: x.view(),
            labels: &y,
            weight: 1.0,
        }])?;
    }
    Ok(trainer.finish())
}
