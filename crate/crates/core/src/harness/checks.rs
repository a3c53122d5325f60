//! Pass/fail thresholds over multi-seed runs of each scenario.

use serde::{Deserialize, Serialize};

use super::scenario::{timing_report, ExperimentReport, Scenario};
use crate::augment::Operator;
use crate::valuation::ReferenceMode;

/// Outcome of one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Seeds needed to pass a "k of 10" style threshold with `n` seeds.
fn required(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - 1e-9).ceil() as usize
}

fn count_check(name: &str, hits: usize, n: usize, fraction: f64) -> Check {
    let need = required(fraction, n);
    Check::new(name, hits >= need, format!("{hits}/{n} seeds (need {need})"))
}

fn mean_of(reports: &[ExperimentReport], method: &str) -> f64 {
    reports.iter().map(|r| r.accuracies[method]).sum::<f64>() / reports.len() as f64
}

/// Posterior strictly decreasing in the sources' noise levels.
pub fn strictly_decreasing_in_noise(report: &ExperimentReport) -> bool {
    let mut by_noise: Vec<(f64, f64)> = report
        .sources
        .iter()
        .map(|s| (s.epsilon.unwrap_or(0.0), s.posterior))
        .collect();
    by_noise.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_noise.windows(2).all(|w| w[1].1 < w[0].1)
}

/// Posterior of the identity versus the strongest noise augmentor.
pub fn identity_beats_strongest_noise(report: &ExperimentReport) -> bool {
    let augs = &report.config.augmentation.augmentors;
    let post = report.valuation.posterior();
    let identity = augs.iter().position(|a| a.operator == Operator::Identity);
    let noisiest = augs
        .iter()
        .enumerate()
        .filter(|(_, a)| a.operator == Operator::AddGaussianNoise)
        .max_by(|a, b| a.1.magnitude.total_cmp(&b.1.magnitude))
        .map(|(i, _)| i);
    match (identity, noisiest) {
        (Some(i), Some(j)) => post[i] > post[j],
        _ => false,
    }
}

/// Evaluates the thresholds for the scenario shared by `reports`.
pub fn evaluate(reports: &[ExperimentReport]) -> Vec<Check> {
    let Some(first) = reports.first() else {
        return vec![Check::new("reports", false, "no reports".into())];
    };
    let n = reports.len();
    match first.config.scenario {
        Scenario::Annotator => {
            let ranked = reports.iter().filter(|r| strictly_decreasing_in_noise(r)).count();
            let (gbv, uni) = (mean_of(reports, "gbv"), mean_of(reports, "uniform"));
            let beats_mmd = reports.iter().filter(|r| r.accuracies["gbv"] >= r.accuracies["mmd"]).count();
            let max_mean = reports
                .iter()
                .map(|r| timing_report(r).mean)
                .fold(0.0, f64::max);
            vec![
                count_check("posterior strictly decreasing in noise", ranked, n, 0.9),
                Check::new(
                    "gbv mean accuracy above uniform",
                    gbv > uni,
                    format!("gbv {gbv:.4} vs uniform {uni:.4}"),
                ),
                count_check("gbv at least mmd baseline", beats_mmd, n, 0.7),
                Check::new(
                    "valuation under 1 s per source",
                    max_mean < 1.0,
                    format!("worst seed mean {max_mean:.4} s/source"),
                ),
            ]
        }
        Scenario::Correlation => {
            let (threshold, fraction) = match first.config.reference_mode {
                ReferenceMode::Labeled => (0.85, 0.9),
                _ => (0.6, 0.8),
            };
            let hits = reports
                .iter()
                .filter(|r| r.correlations.get("gbv").is_some_and(|c| *c >= threshold))
                .count();
            vec![count_check(&format!("pearson at least {threshold}"), hits, n, fraction)]
        }
        Scenario::Continual => {
            let hits = reports
                .iter()
                .filter(|r| {
                    let a = &r.accuracies;
                    a["cgbv"] >= a["no_update"] && a["cgbv"] >= a["average"]
                })
                .count();
            vec![count_check("cgbv at least no_update and average", hits, n, 0.8)]
        }
        Scenario::Augmentation => {
            let hits = reports.iter().filter(|r| identity_beats_strongest_noise(r)).count();
            let (gbv, uni) = (mean_of(reports, "gbv"), mean_of(reports, "uniform"));
            vec![
                count_check("identity above strongest noise", hits, n, 1.0),
                Check::new(
                    "gbv mean accuracy at least uniform",
                    gbv >= uni,
                    format!("gbv {gbv:.4} vs uniform {uni:.4}"),
                ),
            ]
        }
    }
}
