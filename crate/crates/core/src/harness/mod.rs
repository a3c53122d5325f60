//! End-to-end experiments on synthetic tasks, with JSON reports.
//!
//! Four scenarios are available:
//!
//! * `annotator`: noisy annotators valued against a clean reference set;
//!   final models trained under GBV, uniform and MMD-baseline weightings.
//! * `correlation`: the annotator protocol, reporting the correlation
//!   between posterior weights and per-source model accuracies.
//! * `continual`: a stream of steps with per-step noise permutation.
//! * `augmentation`: augmentors valued with a universal model.

mod checks;
mod json;
mod scenario;
mod stats;

pub use checks::{evaluate, identity_beats_strongest_noise, strictly_decreasing_in_noise, Check};
pub use json::to_json_string;
pub use scenario::{
    mmd_baseline, run_experiment, run_seeds, timing_report, AugmentationConfig, ContinualConfig, DataConfig,
    ExperimentConfig, ExperimentReport, Scenario, SourceEntry, StepEntry, TimingReport, Timings, REPORT_VERSION,
};
pub use stats::{pearson, MeanStderr};
