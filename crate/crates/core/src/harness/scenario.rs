use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{pearson, MeanStderr};
use crate::augment::{default_augmentor_set, train_augmented, Augmentor, SamplingGranularity};
use crate::classifier::{train, train_parts, Model, TrainConfig, Weighting};
use crate::continual::{baseline_average, baseline_no_update, run_stream, PosteriorTrajectory};
use crate::datamodel::{Dataset, Source, SourceCollection};
use crate::error::{ensure, Error, Result};
use crate::synth::{corrupt_sources, mix, split_sources, split_stream, GaussianMixture, NoiseSpec};
use crate::transferability::{neg_mmd, KernelSpec, Measure};
use crate::valuation::{
    annotator_scores, augmentation_scores, build_reference, tune_tau, Prior, ReferenceMode, Tau,
    TauCandidate, Valuation, ValuationRecipe,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Annotator,
    Augmentation,
    Continual,
    Correlation,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Annotator => "annotator",
            Scenario::Augmentation => "augmentation",
            Scenario::Continual => "continual",
            Scenario::Correlation => "correlation",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotator" => Ok(Scenario::Annotator),
            "augmentation" | "augment" => Ok(Scenario::Augmentation),
            "continual" => Ok(Scenario::Continual),
            "correlation" => Ok(Scenario::Correlation),
            other => Err(Error::InvalidArgument(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Synthetic task sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub classes: usize,
    pub dim: usize,
    pub separation: f64,
    pub sources: usize,
    /// Rows per class per source (annotator scenarios), or the training-set
    /// size per class (augmentation).
    pub per_class: usize,
    pub reference_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 20,
            separation: 3.5,
            sources: 5,
            per_class: 100,
            reference_per_class: 100,
            test_per_class: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualConfig {
    pub steps: usize,
    pub per_class_per_step: usize,
    /// Iteration budget of the per-step models `m_s`.
    pub valuation_iterations: usize,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            per_class_per_step: 5,
            valuation_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub augmentors: Vec<Augmentor>,
    pub granularity: SamplingGranularity,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            augmentors: default_augmentor_set(),
            granularity: SamplingGranularity::PerBatch,
        }
    }
}

/// Everything that determines a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub measure: Measure,
    pub tau: Tau,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    /// Softmax temperature of the MMD valuation baseline.
    #[serde(default = "one")]
    pub baseline_temperature: f64,
    #[serde(default)]
    pub continual: ContinualConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    /// Default protocol for `scenario`.
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let (measure, tau) = match scenario {
            Scenario::Annotator | Scenario::Augmentation => (Measure::Leep, Tau::Quick),
            Scenario::Continual => (Measure::LogMe, Tau::Quick),
            Scenario::Correlation => (Measure::LogMe, Tau::Best),
        };
        let mut data = DataConfig::default();
        if scenario == Scenario::Augmentation {
            data.per_class = 20;
        }
        Self {
            scenario,
            seed,
            data,
            train: TrainConfig::default(),
            measure,
            tau,
            reference_mode: ReferenceMode::Labeled,
            baseline_temperature: 1.0,
            continual: ContinualConfig::default(),
            augmentation: AugmentationConfig::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        ensure!(d.sources >= 1, InvalidArgument, "need at least one source");
        ensure!(
            d.per_class >= 1 && d.reference_per_class >= 1 && d.test_per_class >= 1,
            InvalidArgument,
            "per-class sizes must be positive"
        );
        ensure!(
            self.baseline_temperature > 0.0,
            InvalidArgument,
            "baseline temperature must be positive"
        );
        self.train.validate()?;
        if self.scenario == Scenario::Continual {
            ensure!(self.continual.steps >= 1, InvalidArgument, "need at least one step");
            ensure!(
                self.continual.per_class_per_step >= 1,
                InvalidArgument,
                "per-step sizes must be positive"
            );
        }
        if self.scenario == Scenario::Augmentation {
            ensure!(!self.augmentation.augmentors.is_empty(), InvalidArgument, "no augmentors");
        }
        Ok(())
    }
}

/// Per-source line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub id: String,
    pub epsilon: Option<f64>,
    pub score: f64,
    pub posterior: f64,
    /// Held-out accuracy of the model trained on this source alone.
    pub accuracy: Option<f64>,
}

/// Per-step line of a continual report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub step: usize,
    pub epsilons: Vec<f64>,
    pub scores: Vec<f64>,
    pub posterior: Vec<f64>,
    pub accuracies: BTreeMap<String, f64>,
}

/// Valuation-phase wall-clock seconds per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub per_source: Vec<f64>,
    pub valuation_total: f64,
    pub final_training_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub per_source: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

/// Result of one scenario run. Everything except `timings` is a
/// deterministic function of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub tau: f64,
    pub sources: Vec<SourceEntry>,
    pub valuation: Valuation,
    /// Held-out accuracy of the final model under each weighting method.
    pub accuracies: BTreeMap<String, f64>,
    /// The distributions behind `accuracies`.
    pub weightings: BTreeMap<String, Vec<f64>>,
    /// Pearson correlation between a weighting and per-source accuracies.
    pub correlations: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_search: Vec<TauCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PosteriorTrajectory>,
    pub timings: Timings,
}

impl ExperimentReport {
    /// Copy with timings zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.timings = Timings {
            per_source: vec![0.0; r.timings.per_source.len()],
            valuation_total: 0.0,
            final_training_total: 0.0,
        };
        r
    }

    pub fn to_json(&self) -> Result<String> {
        super::json::to_json_string(self)
    }
}

/// Valuation-phase seconds per source with mean ± standard error.
pub fn timing_report(report: &ExperimentReport) -> TimingReport {
    let per_source = report.timings.per_source.clone();
    let s = MeanStderr::of(&per_source);
    TimingReport {
        per_source,
        mean: s.mean,
        stderr: s.stderr,
    }
}

/// Runs one scenario end to end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let result = match config.scenario {
        Scenario::Annotator | Scenario::Correlation => run_annotator(config),
        Scenario::Continual => run_continual(config),
        Scenario::Augmentation => run_augmentation(config),
    };
    result.map_err(|e| e.context(format!("{} scenario, seed {}", config.scenario, config.seed)))
}

/// Runs `config` once per seed, concurrently; reports keep seed order.
pub fn run_seeds(config: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<ExperimentReport>> {
    seeds
        .par_iter()
        .map(|&seed| run_experiment(&config.clone().with_seed(seed)))
        .collect()
}

struct Task {
    mixture: GaussianMixture,
    reference: Dataset,
    test: Dataset,
}

fn task(config: &ExperimentConfig) -> Result<Task> {
    let d = &config.data;
    let mixture = GaussianMixture::new(d.classes, d.dim, d.separation, mix(config.seed, 0))?;
    let reference = mixture.sample(d.reference_per_class, mix(config.seed, 4))?;
    let test = mixture.sample(d.test_per_class, mix(config.seed, 5))?;
    Ok(Task {
        mixture,
        reference,
        test,
    })
}

/// Clean per-source pools with `rows_per_class` rows of each class.
fn clean_sources(config: &ExperimentConfig, mixture: &GaussianMixture, rows_per_class: usize) -> Result<SourceCollection> {
    let m = config.data.sources;
    let pool = mixture.sample(rows_per_class * m, mix(config.seed, 1))?;
    split_sources(&pool, m, mix(config.seed, 2))
}

fn ids_of(sources: &SourceCollection) -> Vec<String> {
    sources.ids()
}

/// Softmax of class-conditional −MMD² between each source and the
/// reference.
pub fn mmd_baseline(sources: &SourceCollection, reference: &Dataset, temperature: f64) -> Result<Valuation> {
    let kernel = KernelSpec::default();
    let scores = sources
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|s| {
            neg_mmd(
                s.dataset.features(),
                reference.features(),
                &kernel,
                Some((s.dataset.labels(), reference.labels())),
            )
            .map(|v| v.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = sources.len();
    Valuation::new(ids_of(sources), vec![1.0 / m as f64; m], scores, temperature)
}

fn run_annotator(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let Task {
        mixture,
        reference,
        test,
    } = task(config)?;
    let m = config.data.sources;
    let noise = NoiseSpec::linear(m);
    let sources = corrupt_sources(
        &clean_sources(config, &mixture, config.data.per_class)?,
        &noise,
        mix(config.seed, 3),
    )?;
    let recipe = ValuationRecipe::annotator(config.measure).with_reference_mode(config.reference_mode);
    let reference_set = build_reference(&sources, Some(&reference), config.reference_mode)?;

    let start = Instant::now();
    let scored = annotator_scores(&sources, &reference_set, &recipe, &config.train)?;
    let valuation_total = start.elapsed().as_secs_f64();
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let prior = Prior::Uniform.resolve(m)?;

    let train_start = Instant::now();
    let (tau, tau_search) = match config.tau {
        Tau::Best if m >= 2 => {
            tune_tau(&sources, &prior, &scores, reference_set.dataset(), &config.train)?
        }
        Tau::Best => (1.0, Vec::new()),
        other => (other.resolve(m)?, Vec::new()),
    };
    let valuation = if m == 1 {
        Valuation::from_distribution(ids_of(&sources), prior.clone(), scores.clone(), 1.0, vec![1.0])?
    } else {
        Valuation::new(ids_of(&sources), prior.clone(), scores.clone(), tau)?
    };

    let per_source_models = sources
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|s| train_parts(&[(&s.dataset, 1.0)], &config.train)?.accuracy(&test))
        .collect::<Result<Vec<f64>>>()?;

    let mmd = mmd_baseline(&sources, &reference, config.baseline_temperature)?;
    let uniform = Valuation::uniform(ids_of(&sources))?;
    let methods: Vec<(&str, &Valuation)> = vec![("gbv", &valuation), ("uniform", &uniform), ("mmd", &mmd)];
    let accs = methods
        .par_iter()
        .map(|(_, v)| train(&sources, Weighting::Valuation(v), &config.train)?.accuracy(&test))
        .collect::<Result<Vec<f64>>>()?;
    let final_training_total = train_start.elapsed().as_secs_f64();

    let mut correlations = BTreeMap::new();
    for (name, v) in [("gbv", &valuation), ("mmd", &mmd)] {
        if let Ok(r) = pearson(v.posterior(), &per_source_models) {
            correlations.insert(name.to_string(), r);
        }
    }
    let sources_out = sources
        .iter()
        .enumerate()
        .map(|(i, s)| SourceEntry {
            id: s.id.clone(),
            epsilon: Some(noise.epsilons[i]),
            score: scores[i],
            posterior: valuation.posterior()[i],
            accuracy: Some(per_source_models[i]),
        })
        .collect();
    Ok(ExperimentReport {
        version: REPORT_VERSION,
        config: config.clone(),
        seed: config.seed,
        tau: valuation.tau(),
        sources: sources_out,
        accuracies: methods.iter().map(|(n, _)| n.to_string()).zip(accs).collect(),
        weightings: methods.iter().map(|(n, v)| (n.to_string(), v.posterior().to_vec())).collect(),
        valuation,
        correlations,
        tau_search,
        steps: Vec::new(),
        trajectory: None,
        timings: Timings {
            per_source: scored.iter().map(|s| s.seconds).collect(),
            valuation_total,
            final_training_total,
        },
    })
}

fn run_continual(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let Task { mixture, reference, test } = task(config)?;
    let m = config.data.sources;
    let cc = &config.continual;
    let clean = clean_sources(config, &mixture, cc.per_class_per_step * cc.steps)?;
    let noise = NoiseSpec::linear(m).permuted(mix(config.seed, 6));
    let stream = split_stream(&clean, cc.steps, &noise, mix(config.seed, 7))?;
    let tau = config.tau.resolve(m)?;
    let recipe = ValuationRecipe::annotator(config.measure).with_reference_mode(config.reference_mode);
    ensure!(
        config.reference_mode != ReferenceMode::UnionOfSources,
        InvalidArgument,
        "continual valuation needs a fixed reference set"
    );
    let reference_set = build_reference(&clean, Some(&reference), config.reference_mode)?;
    let step_config = config.train.clone().with_iterations(cc.valuation_iterations);

    // Training path: keeps every step for the merged final models. The
    // valuation path below receives each step by value and sees it once.
    let merged_steps: Vec<SourceCollection> = stream.steps.iter().map(|s| s.sources.clone()).collect();

    let start = Instant::now();
    let trajectory = run_stream(
        stream.steps.clone(),
        &reference_set,
        &recipe,
        &Prior::Uniform,
        tau,
        &step_config,
    )?;
    let valuation_total = start.elapsed().as_secs_f64();

    let train_start = Instant::now();
    let uniform = Valuation::uniform(clean.ids())?;
    let steps = (1..=cc.steps)
        .into_par_iter()
        .map(|t| {
            let merged = merge_prefix(&merged_steps[..t])?;
            let p_t = trajectory.at(t).expect("step exists").clone();
            let methods = [
                ("cgbv", p_t.clone()),
                ("no_update", baseline_no_update(&trajectory)?),
                ("average", baseline_average(&trajectory, t)?),
                ("uniform", uniform.clone()),
            ];
            let mut accuracies = BTreeMap::new();
            for (name, v) in &methods {
                let acc = train(&merged, Weighting::Valuation(v), &config.train)?.accuracy(&test)?;
                accuracies.insert(name.to_string(), acc);
            }
            Ok(StepEntry {
                step: t,
                epsilons: stream.epsilons_at(&noise, t),
                scores: p_t.scores().to_vec(),
                posterior: p_t.posterior().to_vec(),
                accuracies,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let final_training_total = train_start.elapsed().as_secs_f64();

    let last = trajectory.last().clone();
    let final_step = steps.last().expect("at least one step");
    let mut weightings = BTreeMap::new();
    weightings.insert("cgbv".into(), last.posterior().to_vec());
    weightings.insert("no_update".into(), baseline_no_update(&trajectory)?.posterior().to_vec());
    weightings.insert(
        "average".into(),
        baseline_average(&trajectory, cc.steps)?.posterior().to_vec(),
    );
    weightings.insert("uniform".into(), uniform.posterior().to_vec());
    Ok(ExperimentReport {
        version: REPORT_VERSION,
        config: config.clone(),
        seed: config.seed,
        tau,
        sources: clean
            .iter()
            .enumerate()
            .map(|(i, s)| SourceEntry {
                id: s.id.clone(),
                epsilon: None,
                score: trajectory.states()[1..].iter().map(|v| v.scores()[i]).sum(),
                posterior: last.posterior()[i],
                accuracy: None,
            })
            .collect(),
        accuracies: final_step.accuracies.clone(),
        weightings,
        valuation: last,
        correlations: BTreeMap::new(),
        tau_search: Vec::new(),
        steps,
        trajectory: Some(trajectory),
        timings: Timings {
            per_source: Vec::new(),
            valuation_total,
            final_training_total,
        },
    })
}

fn merge_prefix(steps: &[SourceCollection]) -> Result<SourceCollection> {
    let first = &steps[0];
    let sources = first
        .iter()
        .map(|s| {
            let parts: Vec<&Dataset> = steps.iter().map(|c| c.get(&s.id).expect("consistent ids")).collect();
            Ok(Source {
                id: s.id.clone(),
                dataset: Dataset::concat(parts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SourceCollection::new(sources)
}

fn run_augmentation(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let Task { mixture, test, .. } = task(config)?;
    let train_set = mixture.sample(config.data.per_class, mix(config.seed, 1))?;
    let augmentors = &config.augmentation.augmentors;
    let s = augmentors.len();

    let start = Instant::now();
    let universal: Model = train_parts(&[(&train_set, 1.0)], &config.train)?;
    let scored = augmentation_scores(&train_set, augmentors, &universal, config.measure, mix(config.seed, 8))?;
    let valuation_total = start.elapsed().as_secs_f64();
    let scores: Vec<f64> = scored.iter().map(|x| x.score).collect();
    let ids: Vec<String> = augmentors.iter().enumerate().map(|(i, a)| format!("{i}:{a}")).collect();
    let prior = vec![1.0 / s as f64; s];
    let tau = match config.tau {
        Tau::Best => {
            return Err(Error::InvalidArgument(
                "tau=best is not supported for augmentation valuation".into(),
            ))
        }
        t => t.resolve(s)?,
    };
    let valuation = if s == 1 {
        Valuation::from_distribution(ids.clone(), prior.clone(), scores.clone(), 1.0, vec![1.0])?
    } else {
        Valuation::new(ids.clone(), prior.clone(), scores.clone(), tau)?
    };
    let uniform = Valuation::uniform(ids.clone())?;

    let train_start = Instant::now();
    let methods: Vec<(&str, &Valuation)> = vec![("gbv", &valuation), ("uniform", &uniform)];
    let mut accs: Vec<f64> = methods
        .par_iter()
        .map(|(_, v)| {
            train_augmented(&train_set, augmentors, v, &config.train, config.augmentation.granularity)?
                .accuracy(&test)
        })
        .collect::<Result<_>>()?;
    accs.push(universal.accuracy(&test)?);
    let final_training_total = train_start.elapsed().as_secs_f64();

    let mut accuracies: BTreeMap<String, f64> = methods.iter().map(|(n, _)| n.to_string()).zip(accs.clone()).collect();
    accuracies.insert("no_augmentation".into(), accs[2]);
    Ok(ExperimentReport {
        version: REPORT_VERSION,
        config: config.clone(),
        seed: config.seed,
        tau: valuation.tau(),
        sources: ids
            .iter()
            .enumerate()
            .map(|(i, id)| SourceEntry {
                id: id.clone(),
                epsilon: None,
                score: scores[i],
                posterior: valuation.posterior()[i],
                accuracy: None,
            })
            .collect(),
        accuracies,
        weightings: methods.iter().map(|(n, v)| (n.to_string(), v.posterior().to_vec())).collect(),
        valuation,
        correlations: BTreeMap::new(),
        tau_search: Vec::new(),
        steps: Vec::new(),
        trajectory: None,
        timings: Timings {
            per_source: scored.iter().map(|x| x.seconds).collect(),
            valuation_total,
            final_training_total,
        },
    })
}
