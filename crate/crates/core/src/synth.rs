//! Seeded synthetic data: Gaussian-mixture classification tasks, label
//! noise, annotator splits and stream splits.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::continual::StreamStep;
use crate::datamodel::{Dataset, Source, SourceCollection};
use crate::error::{ensure, Error, Result};

/// Isotropic unit-variance Gaussian classes around fixed means.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Array2<f64>,
}

impl GaussianMixture {
    /// Places `C` means in `R^d` with pairwise distance at least
    /// `separation`. When `C ≤ d` the means are scaled orthonormal vectors
    /// at pairwise distance exactly `separation`; otherwise they are drawn
    /// by rejection sampling.
    pub fn new(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Self> {
        ensure!(num_classes >= 2, InvalidArgument, "need at least 2 classes, got {num_classes}");
        ensure!(dim >= 2, InvalidArgument, "need dimension at least 2, got {dim}");
        ensure!(
            separation >= 0.0 && separation.is_finite(),
            InvalidArgument,
            "separation must be nonnegative, got {separation}"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = if num_classes <= dim {
            let a = DMatrix::<f64>::from_fn(dim, num_classes, |_, _| rng.sample(StandardNormal));
            let q = a.qr().q();
            let scale = separation / 2f64.sqrt();
            Array2::from_shape_fn((num_classes, dim), |(c, j)| q[(j, c)] * scale)
        } else {
            rejection_means(num_classes, dim, separation, &mut rng)?
        };
        Ok(Self { means })
    }

    pub fn num_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    /// `n_per_class` rows per class, grouped by class in label order.
    pub fn sample(&self, n_per_class: usize, seed: u64) -> Result<Dataset> {
        ensure!(n_per_class >= 1, InvalidArgument, "n_per_class must be at least 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, d) = self.means.dim();
        let n = c * n_per_class;
        let mut x = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for (i, mut row) in x.outer_iter_mut().enumerate() {
            let class = i / n_per_class;
            for (v, m) in row.iter_mut().zip(self.means.row(class)) {
                let z: f64 = rng.sample(StandardNormal);
                *v = m + z;
            }
            labels.push(class);
        }
        Dataset::new(x, labels, c)
    }
}

fn rejection_means(c: usize, d: usize, separation: f64, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let mut radius = separation.max(1e-9) * (c as f64).powf(1.0 / d as f64);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut attempts = 0usize;
    while means.len() < c {
        let candidate: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..=radius)).collect();
        let ok = means.iter().all(|m| {
            m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= separation * separation
        });
        if ok {
            means.push(candidate);
        }
        attempts += 1;
        if attempts % 10_000 == 0 {
            radius *= 1.5;
        }
        if attempts > 10_000_000 {
            return Err(Error::InvalidArgument("could not place class means".into()));
        }
    }
    Ok(Array2::from_shape_fn((c, d), |(i, j)| means[i][j]))
}

/// One-call mixture sample: means and rows both derived from `seed`.
pub fn gaussian_mixture(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    GaussianMixture::new(num_classes, dim, separation, seed)?.sample(n_per_class, seed.wrapping_add(1))
}

/// Replaces each label, with probability `epsilon`, by a uniformly random
/// different class. Features are untouched.
pub fn corrupt_labels(dataset: &Dataset, epsilon: f64, seed: u64) -> Result<Dataset> {
    ensure!(
        (0.0..=1.0).contains(&epsilon),
        InvalidArgument,
        "noise probability must be in [0, 1], got {epsilon}"
    );
    let c = dataset.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = dataset
        .labels()
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < epsilon {
                (y + rng.random_range(1..c)) % c
            } else {
                y
            }
        })
        .collect();
    dataset.with_labels(labels)
}

/// Partitions row indices into `parts` near-equal groups, stratified by
/// class: rows are shuffled within each class and dealt round-robin, with
/// the dealer position carried across classes.
fn stratified_partition(dataset: &Dataset, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); parts];
    let mut k = 0usize;
    for mut rows in dataset.indices_by_class() {
        rows.shuffle(rng);
        for row in rows {
            groups[k % parts].push(row);
            k += 1;
        }
    }
    groups
}

/// Splits a dataset into `M` disjoint sources `source_0 … source_{M−1}`.
pub fn split_sources(dataset: &Dataset, num_sources: usize, seed: u64) -> Result<SourceCollection> {
    ensure!(num_sources >= 1, InvalidArgument, "need at least one source");
    ensure!(
        num_sources <= dataset.len(),
        InvalidArgument,
        "cannot split {} rows into {num_sources} sources",
        dataset.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = stratified_partition(dataset, num_sources, &mut rng);
    let sources = groups
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            Ok(Source {
                id: format!("source_{i}"),
                dataset: dataset.select(rows)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SourceCollection::new(sources)
}

/// Per-source label-noise probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub epsilons: Vec<f64>,
    /// Seed for the per-step permutation of `epsilons` among sources.
    /// `None` keeps the assignment fixed.
    #[serde(default)]
    pub permutation_seed: Option<u64>,
}

impl NoiseSpec {
    pub fn new(epsilons: Vec<f64>) -> Result<Self> {
        ensure!(
            epsilons.iter().all(|e| (0.0..=1.0).contains(e)),
            InvalidArgument,
            "noise probabilities must lie in [0, 1]"
        );
        Ok(Self {
            epsilons,
            permutation_seed: None,
        })
    }

    /// `ε_i = i / M` for `i = 0, …, M−1`.
    pub fn linear(num_sources: usize) -> Self {
        Self {
            epsilons: (0..num_sources).map(|i| i as f64 / num_sources as f64).collect(),
            permutation_seed: None,
        }
    }

    pub fn permuted(mut self, seed: u64) -> Self {
        self.permutation_seed = Some(seed);
        self
    }
}

/// Corrupts every source with its own noise level (source `i` gets
/// `epsilons[i]`).
pub fn corrupt_sources(collection: &SourceCollection, noise: &NoiseSpec, seed: u64) -> Result<SourceCollection> {
    ensure!(
        noise.epsilons.len() == collection.len(),
        DimensionMismatch,
        "{} noise levels for {} sources",
        noise.epsilons.len(),
        collection.len()
    );
    let sources = collection
        .iter()
        .zip(&noise.epsilons)
        .enumerate()
        .map(|(i, (s, &eps))| {
            Ok(Source {
                id: s.id.clone(),
                dataset: corrupt_labels(&s.dataset, eps, mix(seed, i as u64))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SourceCollection::new(sources)
}

/// A stream of steps together with the noise assignment used at each.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub steps: Vec<StreamStep>,
    /// `assignments[t][s]` is the index into `epsilons` used by source `s`
    /// at step `t + 1`.
    pub assignments: Vec<Vec<usize>>,
    /// Row indices (into each source's clean data) used at each step.
    pub rows: Vec<Vec<Vec<usize>>>,
}

impl Stream {
    /// Noise level of each source at step `t` (1-based).
    pub fn epsilons_at(&self, noise: &NoiseSpec, t: usize) -> Vec<f64> {
        self.assignments[t - 1].iter().map(|&i| noise.epsilons[i]).collect()
    }
}

/// Splits each source's clean data into `T` disjoint steps and corrupts
/// step `t` with that step's (possibly permuted) noise assignment.
pub fn split_stream(collection: &SourceCollection, steps: usize, noise: &NoiseSpec, seed: u64) -> Result<Stream> {
    ensure!(steps >= 1, InvalidArgument, "need at least one step");
    let m = collection.len();
    ensure!(
        noise.epsilons.len() == m,
        DimensionMismatch,
        "{} noise levels for {m} sources",
        noise.epsilons.len()
    );
    for s in collection {
        ensure!(
            s.dataset.len() >= steps,
            InvalidArgument,
            "source {} has {} rows, fewer than {steps} steps",
            s.id,
            s.dataset.len()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_source_rows: Vec<Vec<Vec<usize>>> = collection
        .iter()
        .map(|s| stratified_partition(&s.dataset, steps, &mut rng))
        .collect();
    let mut perm_rng = noise.permutation_seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = Stream {
        steps: Vec::with_capacity(steps),
        assignments: Vec::with_capacity(steps),
        rows: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let mut assignment: Vec<usize> = (0..m).collect();
        if let Some(r) = perm_rng.as_mut() {
            assignment.shuffle(r);
        }
        let sources = collection
            .iter()
            .enumerate()
            .map(|(s, src)| {
                let part = src.dataset.select(&per_source_rows[s][t])?;
                let eps = noise.epsilons[assignment[s]];
                Ok(Source {
                    id: src.id.clone(),
                    dataset: corrupt_labels(&part, eps, mix(mix(seed, t as u64 + 1), s as u64))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.steps.push(StreamStep {
            index: t + 1,
            sources: SourceCollection::new(sources)?,
        });
        out.rows.push(per_source_rows.iter().map(|r| r[t].clone()).collect());
        out.assignments.push(assignment);
    }
    Ok(out)
}

/// Derives a child seed.
pub fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
