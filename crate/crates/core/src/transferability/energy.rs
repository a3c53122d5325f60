use ndarray::ArrayView2;

use super::{Measure, TransferabilityScore};
use crate::error::{ensure, Result};

/// Label-free energy score: the mean over rows of `logsumexp(f_i)`, i.e. the
/// average negative free energy of the extracted features.
pub fn etran_energy(features: ArrayView2<'_, f64>) -> Result<TransferabilityScore> {
    let n = features.nrows();
    ensure!(n >= 1, InvalidArgument, "energy score needs at least one sample");
    ensure!(features.ncols() >= 1, InvalidArgument, "energy score needs at least one feature");
    let total: f64 = features
        .outer_iter()
        .map(|row| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .sum();
    Ok(TransferabilityScore {
        value: total / n as f64,
        measure: Measure::EtranEnergy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_row_scores_log_two() {
        let s = etran_energy(array![[0.0, 0.0]].view()).unwrap();
        assert!((s.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let s = etran_energy(array![[1000.0, 1000.0]].view()).unwrap();
        assert!((s.value - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
