use ndarray::{Array2, ArrayView2};

use super::{Measure, TransferabilityScore};
use crate::error::{ensure, Result};

/// Lower bound applied to the predictor likelihood before taking its log;
/// rounding above 1 is clamped so scores never exceed 0.
pub const LEEP_FLOOR: f64 = 1e-12;

/// Log expected empirical prediction.
///
/// `probs[i, z]` is the source model's probability of pseudo-class `z` for
/// sample `i`; `labels` are target labels in `[0, num_classes)`. The
/// empirical joint `P(y, z)` over the sample gives a conditional `P(y | z)`,
/// and the score is the mean log-likelihood of the labels under
/// `Σ_z P(y | z) · probs[i, z]`.
pub fn leep(probs: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<TransferabilityScore> {
    let (n, z) = probs.dim();
    ensure!(n >= 1, InvalidArgument, "LEEP needs at least one sample");
    ensure!(
        labels.len() == n,
        DimensionMismatch,
        "{} labels for {n} probability rows",
        labels.len()
    );
    for (i, row) in probs.outer_iter().enumerate() {
        let total: f64 = row.sum();
        ensure!(
            (total - 1.0).abs() <= 1e-6 && row.iter().all(|&p| p >= 0.0),
            InvalidArgument,
            "probability row {i} is not normalized (sums to {total})"
        );
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(crate::Error::LabelOutOfRange {
            row: labels.iter().position(|&y| y == bad).unwrap_or(0),
            label: bad as i64,
            num_classes,
        });
    }

    let inv_n = 1.0 / n as f64;
    let mut joint = Array2::<f64>::zeros((num_classes, z));
    for (row, &y) in probs.outer_iter().zip(labels) {
        joint.row_mut(y).scaled_add(inv_n, &row);
    }
    let marginal = joint.sum_axis(ndarray::Axis(0));
    let mut conditional = joint;
    for (j, &pz) in marginal.iter().enumerate() {
        let mut col = conditional.column_mut(j);
        if pz > 0.0 {
            col /= pz;
        } else {
            col.fill(0.0);
        }
    }

    let total: f64 = probs
        .outer_iter()
        .zip(labels)
        .map(|(row, &y)| conditional.row(y).dot(&row).clamp(LEEP_FLOOR, 1.0).ln())
        .sum();
    Ok(TransferabilityScore {
        value: total * inv_n,
        measure: Measure::Leep,
    })
}
