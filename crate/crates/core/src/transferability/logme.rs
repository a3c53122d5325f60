//! Log maximum evidence of a Bayesian linear model on extracted features.
//!
//! For each class `c` the one-hot target column `y` is modeled as
//! `y = F·w + noise` with prior `w ~ N(0, α⁻¹ I)` and noise precision `β`.
//! The log evidence is
//!
//! ```text
//! L(α, β) = n/2·log β + k/2·log α − n/2·log 2π − β/2·‖y − F·m‖² − α/2·mᵀm
//!           − 1/2·log det(α I + β FᵀF),        m = β (α I + β FᵀF)⁻¹ Fᵀ y
//! ```
//!
//! and is maximized by the MacKay fixed point on the SVD `F = U Σ Vᵀ`:
//! `γ = Σ βσ²/(α + βσ²)`, `α ← γ / mᵀm`, `β ← (n − γ) / ‖y − F·m‖²`.
//! The reported score is the per-sample evidence averaged over classes.

use nalgebra::DMatrix;
use ndarray::ArrayView2;

use super::{Measure, TransferabilityScore};
use crate::error::{ensure, Error, Result};

pub const LOGME_MAX_ITERATIONS: usize = 100;
/// Relative change in both α and β below which the fixed point stops.
pub const LOGME_TOLERANCE: f64 = 1e-6;
/// Relative evidence change over the final iteration below which a fit that
/// exhausts the iteration budget is accepted as stalled at the maximum.
pub const LOGME_EVIDENCE_TOLERANCE: f64 = 1e-10;

/// Iteration budget and stopping rule of the fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMeOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub evidence_tolerance: f64,
}

impl Default for LogMeOptions {
    fn default() -> Self {
        Self {
            max_iterations: LOGME_MAX_ITERATIONS,
            tolerance: LOGME_TOLERANCE,
            evidence_tolerance: LOGME_EVIDENCE_TOLERANCE,
        }
    }
}

/// Result of the fixed point for one target column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMeFit {
    pub alpha: f64,
    pub beta: f64,
    pub evidence: f64,
    pub iterations: usize,
}

/// Spectral summary of `F` shared by every class column.
struct Spectrum {
    n: usize,
    k: usize,
    sigma2: Vec<f64>,
    u: DMatrix<f64>,
}

impl Spectrum {
    fn new(features: ArrayView2<'_, f64>) -> Self {
        let (n, k) = features.dim();
        let f = DMatrix::from_fn(n, k, |i, j| features[[i, j]]);
        let svd = f.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let sigma2 = svd.singular_values.iter().map(|s| s * s).collect();
        Self { n, k, sigma2, u }
    }

    fn fit(&self, y: &[f64], options: &LogMeOptions) -> Result<LogMeFit> {
        let n = self.n as f64;
        let y_norm2: f64 = y.iter().map(|v| v * v).sum();
        // Projection coefficients z = Uᵀy and the part of y outside span(F).
        let z: Vec<f64> = (0..self.sigma2.len())
            .map(|j| self.u.column(j).iter().zip(y).map(|(a, b)| a * b).sum())
            .collect();
        let outside = (y_norm2 - z.iter().map(|v| v * v).sum::<f64>()).max(0.0);

        let stats = |alpha: f64, beta: f64| {
            let mut gamma = 0.0;
            let mut m2 = 0.0;
            let mut res = outside;
            for (&s2, &zj) in self.sigma2.iter().zip(&z) {
                let denom = alpha + beta * s2;
                gamma += beta * s2 / denom;
                m2 += beta * beta * s2 * zj * zj / (denom * denom);
                let r = alpha * zj / denom;
                res += r * r;
            }
            (gamma, m2, res)
        };

        let evidence = |alpha: f64, beta: f64| {
            let (_, m2, res) = stats(alpha, beta);
            let log_det: f64 = self
                .sigma2
                .iter()
                .map(|&s2| (alpha + beta * s2).ln())
                .sum::<f64>()
                + (self.k - self.sigma2.len()) as f64 * alpha.ln();
            0.5 * n * beta.ln() + 0.5 * self.k as f64 * alpha.ln()
                - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * beta * res
                - 0.5 * alpha * m2
                - 0.5 * log_det
        };

        let (mut alpha, mut beta) = (1.0f64, 1.0f64);
        let mut iterations = 0;
        let mut rising = false;
        let mut previous = (alpha, beta);
        while iterations < options.max_iterations {
            let (gamma, m2, res) = stats(alpha, beta);
            if m2 <= 0.0 || res <= 0.0 {
                rising = m2 <= 0.0;
                break;
            }
            let next_alpha = gamma / m2;
            let next_beta = (n - gamma) / res;
            iterations += 1;
            let done = ((next_alpha - alpha) / alpha).abs() < options.tolerance
                && ((next_beta - beta) / beta).abs() < options.tolerance;
            rising = next_alpha > alpha;
            previous = (alpha, beta);
            alpha = next_alpha;
            beta = next_beta;
            if !alpha.is_finite() || !beta.is_finite() {
                break;
            }
            if done {
                return Ok(LogMeFit {
                    alpha,
                    beta,
                    evidence: evidence(alpha, beta),
                    iterations,
                });
            }
        }

        if iterations == options.max_iterations && alpha.is_finite() && beta.is_finite() {
            let (last, before) = (evidence(alpha, beta), evidence(previous.0, previous.1));
            if last.is_finite() && (last - before).abs() <= options.evidence_tolerance * last.abs().max(1.0) {
                return Ok(LogMeFit {
                    alpha,
                    beta,
                    evidence: last,
                    iterations,
                });
            }
        }

        // The evidence increases with α exactly when the fixed point moves α
        // up, and near α = ∞ it does so iff Σσ² ≥ β∞·Σσ²z² with
        // β∞ = n/‖y‖². When the iterate is still climbing and that holds,
        // the supremum is the α → ∞ limit (w = 0, all of y is noise).
        let beta_inf = n / y_norm2;
        let weighted: f64 = self.sigma2.iter().zip(&z).map(|(s2, zj)| s2 * zj * zj).sum();
        let total: f64 = self.sigma2.iter().sum();
        if rising && y_norm2 > 0.0 && beta_inf * weighted <= total {
            let limit = 0.5 * n * beta_inf.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n;
            return Ok(LogMeFit {
                alpha: f64::INFINITY,
                beta: beta_inf,
                evidence: limit,
                iterations,
            });
        }
        Err(Error::NotConverged {
            iterations,
            alpha,
            beta,
        })
    }
}

/// Maximum log evidence of one target column `y` (length `n`).
pub fn log_evidence(features: ArrayView2<'_, f64>, y: &[f64]) -> Result<LogMeFit> {
    log_evidence_with(features, y, &LogMeOptions::default())
}

/// As [`log_evidence`], with an explicit stopping rule.
pub fn log_evidence_with(features: ArrayView2<'_, f64>, y: &[f64], options: &LogMeOptions) -> Result<LogMeFit> {
    ensure!(
        y.len() == features.nrows(),
        DimensionMismatch,
        "target has {} entries, features have {} rows",
        y.len(),
        features.nrows()
    );
    Spectrum::new(features).fit(y, options)
}

/// LogME: the maximized evidence `L_c / n` averaged over the classes that
/// occur in `labels`. Classes absent from the sample have an all-zero target
/// whose evidence is unbounded, so they are left out of the average.
pub fn logme(features: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<TransferabilityScore> {
    let (n, k) = features.dim();
    ensure!(n >= 2, InvalidArgument, "LogME needs at least 2 samples, got {n}");
    ensure!(k >= 1, InvalidArgument, "LogME needs at least one feature");
    ensure!(
        labels.len() == n,
        DimensionMismatch,
        "{} labels for {n} feature rows",
        labels.len()
    );
    ensure!(
        features.iter().all(|v| v.is_finite()),
        InvalidArgument,
        "LogME features must be finite"
    );
    ensure!(
        features.iter().any(|&v| v != 0.0),
        InvalidArgument,
        "LogME is undefined on an all-zero feature matrix"
    );
    let mut present = vec![false; num_classes];
    for (row, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                row,
                label: y as i64,
                num_classes,
            });
        }
        present[y] = true;
    }

    let spectrum = Spectrum::new(features);
    let mut total = 0.0;
    let mut classes = 0;
    for class in (0..num_classes).filter(|&c| present[c]) {
        let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { 0.0 }).collect();
        let fit = spectrum
            .fit(&y, &LogMeOptions::default())
            .map_err(|e| e.context(format!("LogME evidence for class {class}")))?;
        total += fit.evidence / n as f64;
        classes += 1;
    }
    Ok(TransferabilityScore {
        value: total / classes as f64,
        measure: Measure::LogMe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(logme(Array2::zeros((4, 2)).view(), &[0, 1, 0, 1], 2).is_err());
        assert!(logme(array![[1.0]].view(), &[0], 2).is_err());
    }

    #[test]
    fn converges_on_informative_features() {
        let f = array![[1.0, 0.1], [0.9, -0.2], [0.1, 1.0], [-0.1, 0.8], [1.1, 0.0], [0.0, 1.2]];
        let fit = log_evidence(f.view(), &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(fit.iterations < LOGME_MAX_ITERATIONS);
        assert!(fit.alpha > 0.0 && fit.beta > 0.0 && fit.evidence.is_finite());
    }

    #[test]
    fn uninformative_features_reach_the_prior_limit() {
        // y is orthogonal to the single feature column, so the evidence
        // grows without bound in α toward the w = 0 limit.
        let f = array![[1.0], [-1.0], [1.0], [-1.0]];
        let y = [1.0, 1.0, 0.0, 0.0];
        let fit = log_evidence(f.view(), &y).unwrap();
        assert!(fit.alpha.is_infinite());
        let beta: f64 = 4.0 / 2.0;
        let expected = 2.0 * beta.ln() - 2.0 * (2.0 * std::f64::consts::PI).ln() - 2.0;
        assert!((fit.evidence - expected).abs() < 1e-12);
    }

    #[test]
    fn exhausted_budget_reports_last_iterate() {
        let f = array![[1.0, 0.1], [0.9, -0.2], [0.1, 1.0], [-0.1, 0.8], [1.1, 0.0], [0.0, 1.2]];
        let options = LogMeOptions {
            max_iterations: 1,
            ..LogMeOptions::default()
        };
        let err = log_evidence_with(f.view(), &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0], &options).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 1, .. }), "{err}");
    }

    #[test]
    fn slow_linear_convergence_is_accepted_once_evidence_settles() {
        // Rank-deficient features whose fixed point creeps toward α ≈ 830.
        let s2 = [941.5140415480357, 737.5474439134371, 44.592232756442, 0.0];
        let z = [0.010723000713472361, -1.0437591192849798, 1.2716934616381173, 1.7998813428398313];
        let spectrum = Spectrum {
            n: 80,
            k: 4,
            sigma2: s2.to_vec(),
            u: DMatrix::identity(80, 4),
        };
        let mut y = vec![0.0; 80];
        y[..4].copy_from_slice(&z);
        y[4] = (20.0 - z.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let fit = spectrum.fit(&y, &LogMeOptions::default()).unwrap();
        assert_eq!(fit.iterations, LOGME_MAX_ITERATIONS);
        assert!((fit.alpha - 827.5).abs() < 1.0);
        let strict = LogMeOptions {
            evidence_tolerance: 0.0,
            ..LogMeOptions::default()
        };
        assert!(spectrum.fit(&y, &strict).is_err());
    }
}
