//! Negated squared maximum mean discrepancy under an RBF kernel.
//!
//! Uses the biased (V-statistic) estimator
//! `MMD² = mean k(x, x′) + mean k(y, y′) − 2·mean k(x, y)`, which is
//! nonnegative and exactly zero for identical samples, with
//! `k(x, y) = exp(−‖x − y‖² / (2σ²))`.

use ndarray::{concatenate, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Measure, TransferabilityScore};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

impl KernelSpec {
    pub fn fixed(sigma: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    /// Concrete σ for a pair of samples.
    pub fn resolve(&self, sample: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(s) => {
                ensure!(s > 0.0 && s.is_finite(), InvalidArgument, "bandwidth must be positive, got {s}");
                Ok(s)
            }
            Bandwidth::MedianHeuristic => median_heuristic_bandwidth(sample, reference),
        }
    }
}

pub fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rbf_kernel(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, sigma: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * sigma * sigma)).exp()
}

fn mean_kernel(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    let mut total = 0.0;
    for x in a.outer_iter() {
        for y in b.outer_iter() {
            total += rbf_kernel(x, y, sigma);
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// Biased MMD² between two row samples.
fn mmd2(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, sigma: f64) -> f64 {
    let value = mean_kernel(x, x, sigma) + mean_kernel(y, y, sigma) - 2.0 * mean_kernel(x, y, sigma);
    value.max(0.0)
}

/// Median of the pairwise Euclidean distances between all distinct rows of
/// `[sample; reference]`. Falls back to 1.0 when that median is zero.
pub fn median_heuristic_bandwidth(sample: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>) -> Result<f64> {
    ensure!(
        sample.ncols() == reference.ncols(),
        DimensionMismatch,
        "sample has {} columns, reference has {}",
        sample.ncols(),
        reference.ncols()
    );
    let all = concatenate(Axis(0), &[sample, reference]).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let n = all.nrows();
    ensure!(n >= 2, InvalidArgument, "median heuristic needs at least 2 rows");
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            distances.push(squared_distance(all.row(i), all.row(j)).sqrt());
        }
    }
    let mid = distances.len() / 2;
    let (_, &mut upper, _) = distances.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if distances.len() % 2 == 1 {
        upper
    } else {
        let lower = distances[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

/// Negated biased MMD² between `sample` and `reference`.
///
/// With `labels = Some((sample_labels, reference_labels))` the score is the
/// class-conditional variant: the mean of per-class −MMD² over classes
/// present in both sets. The bandwidth is resolved once on the full sets.
pub fn neg_mmd(
    sample: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
    kernel: &KernelSpec,
    labels: Option<(&[usize], &[usize])>,
) -> Result<TransferabilityScore> {
    ensure!(
        sample.ncols() == reference.ncols(),
        DimensionMismatch,
        "sample has {} columns, reference has {}",
        sample.ncols(),
        reference.ncols()
    );
    ensure!(
        sample.nrows() >= 1 && reference.nrows() >= 1,
        InvalidArgument,
        "MMD needs nonempty samples"
    );
    let sigma = kernel.resolve(sample, reference)?;
    let Some((sample_labels, reference_labels)) = labels else {
        return Ok(TransferabilityScore {
            value: -mmd2(sample, reference, sigma),
            measure: Measure::NegMmd,
        });
    };
    ensure!(
        sample_labels.len() == sample.nrows() && reference_labels.len() == reference.nrows(),
        DimensionMismatch,
        "label vectors do not match sample sizes"
    );
    let classes = sample_labels.iter().chain(reference_labels).copied().max().unwrap_or(0) + 1;
    let group = |labels: &[usize]| {
        let mut g = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            g[l].push(i);
        }
        g
    };
    let (gs, gr) = (group(sample_labels), group(reference_labels));
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..classes {
        match (gs[c].is_empty(), gr[c].is_empty()) {
            (false, false) => {
                let xs = sample.select(Axis(0), &gs[c]);
                let ys = reference.select(Axis(0), &gr[c]);
                total -= mmd2(xs.view(), ys.view(), sigma);
                used += 1;
            }
            (true, true) => {}
            _ => log::warn!("class {c} is missing from one side; skipped in conditional MMD"),
        }
    }
    if used == 0 {
        return Err(Error::InvalidArgument(
            "class-conditional MMD: the two sets share no classes".into(),
        ));
    }
    Ok(TransferabilityScore {
        value: total / used as f64,
        measure: Measure::CondNegMmd,
    })
}
