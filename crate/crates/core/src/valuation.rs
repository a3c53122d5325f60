//! Generalized-Bayes valuation of data sources.
//!
//! Each source `s` gets the posterior
//!
//! ```text
//! P(s) ∝ p(s) · exp(T_s / τ)
//! ```
//!
//! where `T_s` is a transferability score. Two recipes produce the scores:
//!
//! * **annotator**: train a small model `m_s` on each source and score it
//!   against a reference set, `T(m_s, D*)`;
//! * **augmentation**: score one fixed universal model against each
//!   augmented copy of the training set, `T(m^u, D_s)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::Augmentor;
use crate::classifier::{train, train_parts, Model, TrainConfig, Weighting};
use crate::datamodel::{Dataset, SourceCollection};
use crate::error::{ensure, Error, Result};
use crate::transferability::{etran_energy, leep, logme, neg_mmd, KernelSpec, Measure};

/// Candidate temperatures for the grid search.
pub const TAU_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

/// A normalized posterior over a finite, ordered set of sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Valuation {
    source_ids: Vec<String>,
    prior: Vec<f64>,
    scores: Vec<f64>,
    tau: f64,
    posterior: Vec<f64>,
}

impl Valuation {
    /// Computes the posterior from a prior and raw scores.
    pub fn new(source_ids: Vec<String>, prior: Vec<f64>, scores: Vec<f64>, tau: f64) -> Result<Self> {
        ensure!(
            source_ids.len() == prior.len() && prior.len() == scores.len(),
            DimensionMismatch,
            "{} ids, {} prior entries, {} scores",
            source_ids.len(),
            prior.len(),
            scores.len()
        );
        let posterior = gbv_posterior(&prior, &scores, tau)?;
        Ok(Self {
            source_ids,
            prior,
            scores,
            tau,
            posterior,
        })
    }

    /// Uses an externally computed distribution as the posterior, as for
    /// baselines that are not generalized-Bayes posteriors.
    pub fn from_distribution(
        source_ids: Vec<String>,
        prior: Vec<f64>,
        scores: Vec<f64>,
        tau: f64,
        posterior: Vec<f64>,
    ) -> Result<Self> {
        ensure!(
            source_ids.len() == prior.len() && prior.len() == scores.len() && scores.len() == posterior.len(),
            DimensionMismatch,
            "valuation fields have inconsistent lengths"
        );
        check_distribution(&prior, 1e-6, "prior")?;
        check_distribution(&posterior, 1e-6, "posterior")?;
        let posterior = normalize(posterior);
        Ok(Self {
            source_ids,
            prior,
            scores,
            tau,
            posterior,
        })
    }

    pub fn uniform(source_ids: Vec<String>) -> Result<Self> {
        let m = source_ids.len();
        ensure!(m >= 1, InvalidArgument, "valuation needs at least one source");
        let p = vec![1.0 / m as f64; m];
        Ok(Self {
            source_ids,
            prior: p.clone(),
            scores: vec![0.0; m],
            tau: 1.0,
            posterior: p,
        })
    }

    /// All mass on `index`.
    pub fn point_mass(source_ids: Vec<String>, index: usize) -> Result<Self> {
        let m = source_ids.len();
        ensure!(index < m, InvalidArgument, "index {index} out of range for {m} sources");
        let mut posterior = vec![0.0; m];
        posterior[index] = 1.0;
        Ok(Self {
            source_ids,
            prior: vec![1.0 / m as f64; m],
            scores: vec![0.0; m],
            tau: 1.0,
            posterior,
        })
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn len(&self) -> usize {
        self.posterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posterior.is_empty()
    }

    /// Same prior and scores at a different temperature.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.source_ids.clone(), self.prior.clone(), self.scores.clone(), tau)
    }
}

/// `1 / log2(M)`.
pub fn quick_tau(num_sources: usize) -> Result<f64> {
    ensure!(
        num_sources >= 2,
        InvalidArgument,
        "quick tau needs at least 2 sources, got {num_sources}"
    );
    Ok(1.0 / (num_sources as f64).log2())
}

/// `posterior[i] ∝ prior[i] · exp(scores[i] / tau)`.
///
/// The maximum of `scores / tau` over sources with positive prior is
/// subtracted before exponentiating, so zero-prior sources cannot cause
/// underflow of the others and always get zero mass.
pub fn gbv_posterior(prior: &[f64], scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    ensure!(tau > 0.0 && tau.is_finite(), InvalidArgument, "tau must be positive, got {tau}");
    ensure!(
        prior.len() == scores.len() && !prior.is_empty(),
        DimensionMismatch,
        "prior has {} entries, scores {}",
        prior.len(),
        scores.len()
    );
    ensure!(
        scores.iter().all(|s| s.is_finite()),
        InvalidArgument,
        "scores must be finite"
    );
    check_distribution(prior, 1e-6, "prior")?;
    let shift = prior
        .iter()
        .zip(scores)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, s)| s / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let unnormalized: Vec<f64> = prior
        .iter()
        .zip(scores)
        .map(|(&p, &s)| if p > 0.0 { p * (s / tau - shift).exp() } else { 0.0 })
        .collect();
    Ok(normalize(unnormalized))
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

fn check_distribution(p: &[f64], tol: f64, what: &str) -> Result<()> {
    ensure!(
        p.iter().all(|x| x.is_finite() && *x >= 0.0),
        InvalidArgument,
        "{what} entries must be finite and nonnegative"
    );
    let total: f64 = p.iter().sum();
    ensure!(
        (total - 1.0).abs() <= tol,
        InvalidArgument,
        "{what} sums to {total}, expected 1"
    );
    Ok(())
}

/// Prior over sources.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prior {
    #[default]
    Uniform,
    Explicit(Vec<f64>),
}

impl Prior {
    pub fn resolve(&self, num_sources: usize) -> Result<Vec<f64>> {
        match self {
            Prior::Uniform => {
                ensure!(num_sources >= 1, InvalidArgument, "no sources");
                Ok(vec![1.0 / num_sources as f64; num_sources])
            }
            Prior::Explicit(p) => {
                ensure!(
                    p.len() == num_sources,
                    DimensionMismatch,
                    "prior has {} entries for {num_sources} sources",
                    p.len()
                );
                check_distribution(p, 1e-6, "prior")?;
                Ok(p.clone())
            }
        }
    }
}

/// Temperature choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau {
    /// `1 / log2(M)`.
    Quick,
    Fixed(f64),
    /// Grid search over [`TAU_GRID`] by reference accuracy of the final
    /// weighted model; resolved by the caller that owns the final training.
    Best,
}

impl Tau {
    /// Numeric temperature for `num_sources` sources. `Best` cannot be
    /// resolved here.
    pub fn resolve(self, num_sources: usize) -> Result<f64> {
        match self {
            Tau::Quick if num_sources == 1 => Ok(1.0),
            Tau::Quick => quick_tau(num_sources),
            Tau::Fixed(t) => {
                ensure!(t > 0.0 && t.is_finite(), InvalidArgument, "tau must be positive, got {t}");
                Ok(t)
            }
            Tau::Best => Err(Error::InvalidArgument(
                "tau=best needs a grid search driven by final-model accuracy".into(),
            )),
        }
    }
}

impl FromStr for Tau {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Tau::Quick),
            "best" => Ok(Tau::Best),
            other => other
                .parse::<f64>()
                .map(Tau::Fixed)
                .map_err(|_| Error::InvalidArgument(format!("tau must be quick, best or a number, got {other:?}"))),
        }
    }
}

impl fmt::Display for Tau {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tau::Quick => f.write_str("quick"),
            Tau::Best => f.write_str("best"),
            Tau::Fixed(t) => write!(f, "{t}"),
        }
    }
}

/// Outcome of evaluating one temperature in a grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauCandidate {
    pub tau: f64,
    pub accuracy: f64,
}

/// Picks a temperature from `grid` by reference-set accuracy of the model
/// trained under each candidate posterior.
///
/// Accuracies within one binomial standard error (`√(a(1−a)/n)`, with `n`
/// the reference size) of the best are treated as ties, and the largest
/// tied temperature wins: the flattest posterior the data cannot
/// distinguish from the best one.
pub fn select_tau<F>(grid: &[f64], reference_size: usize, mut evaluate: F) -> Result<(f64, Vec<TauCandidate>)>
where
    F: FnMut(f64) -> Result<f64>,
{
    ensure!(!grid.is_empty(), InvalidArgument, "empty tau grid");
    ensure!(reference_size >= 1, InvalidArgument, "empty reference set");
    let mut candidates = Vec::with_capacity(grid.len());
    for &tau in grid {
        let accuracy = evaluate(tau)?;
        candidates.push(TauCandidate { tau, accuracy });
    }
    let best = candidates.iter().map(|c| c.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let se = (best * (1.0 - best) / reference_size as f64).sqrt();
    let chosen = candidates
        .iter()
        .filter(|c| c.accuracy >= best - se)
        .map(|c| c.tau)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((chosen, candidates))
}

/// Best-temperature search for an annotator valuation: each candidate in
/// [`TAU_GRID`] weights a final model trained on `sources`, scored by its
/// accuracy on `selection`.
pub fn tune_tau(
    sources: &SourceCollection,
    prior: &[f64],
    scores: &[f64],
    selection: &Dataset,
    train_config: &TrainConfig,
) -> Result<(f64, Vec<TauCandidate>)> {
    select_tau(&TAU_GRID, selection.len(), |tau| {
        let v = Valuation::new(sources.ids(), prior.to_vec(), scores.to_vec(), tau)?;
        train(sources, Weighting::Valuation(&v), train_config)?.accuracy(selection)
    })
}

/// What the scored model is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    TrainSmallModel,
    UniversalModel,
}

/// Which sample set the model is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Varphi {
    ReferenceSet,
    SampleSet,
}

/// How the reference set is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// A clean labeled reference set.
    #[default]
    Labeled,
    /// A reference set whose labels are unusable; only the energy score applies.
    UnlabeledEnergy,
    /// The concatenation of all source sample sets, labels included.
    UnionOfSources,
}

impl FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled" => Ok(ReferenceMode::Labeled),
            "unlabeled" | "unlabeled_energy" => Ok(ReferenceMode::UnlabeledEnergy),
            "union" | "union_of_sources" => Ok(ReferenceMode::UnionOfSources),
            other => Err(Error::InvalidArgument(format!("unknown reference mode {other:?}"))),
        }
    }
}

/// Feature space in which MMD scores compare samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdSpace {
    #[default]
    Raw,
    /// Logits of one probe model trained on the reference set.
    SharedProbe,
}

/// Ingredients of the generalized-Bayes loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuationRecipe {
    pub phi: Phi,
    pub varphi: Varphi,
    pub measure: Measure,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    #[serde(default)]
    pub mmd_space: MmdSpace,
    #[serde(default)]
    pub kernel: KernelSpec,
}

impl ValuationRecipe {
    pub fn annotator(measure: Measure) -> Self {
        Self {
            phi: Phi::TrainSmallModel,
            varphi: Varphi::ReferenceSet,
            measure,
            reference_mode: ReferenceMode::Labeled,
            mmd_space: MmdSpace::Raw,
            kernel: KernelSpec::default(),
        }
    }

    pub fn augmentation(measure: Measure) -> Self {
        Self {
            phi: Phi::UniversalModel,
            varphi: Varphi::SampleSet,
            ..Self::annotator(measure)
        }
    }

    pub fn with_reference_mode(mut self, mode: ReferenceMode) -> Self {
        self.reference_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.reference_mode != ReferenceMode::UnlabeledEnergy || self.measure == Measure::EtranEnergy,
            InvalidArgument,
            "unlabeled reference mode requires the etran_energy measure, got {}",
            self.measure
        );
        Ok(())
    }
}

/// A reference set together with whether its labels may be used.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    dataset: Dataset,
    labeled: bool,
}

impl ReferenceSet {
    pub fn labeled(dataset: Dataset) -> Self {
        Self { dataset, labeled: true }
    }

    pub fn unlabeled(dataset: Dataset) -> Self {
        Self {
            dataset,
            labeled: false,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Result<&[usize]> {
        if self.labeled {
            Ok(self.dataset.labels())
        } else {
            Err(Error::LabelsUnavailable)
        }
    }
}

/// Materializes the reference set for `mode`.
pub fn build_reference(
    sources: &SourceCollection,
    reference: Option<&Dataset>,
    mode: ReferenceMode,
) -> Result<ReferenceSet> {
    match (mode, reference) {
        (ReferenceMode::Labeled, Some(r)) => Ok(ReferenceSet::labeled(r.clone())),
        (ReferenceMode::UnlabeledEnergy, Some(r)) => Ok(ReferenceSet::unlabeled(r.clone())),
        (ReferenceMode::UnionOfSources, _) => Ok(ReferenceSet::labeled(Dataset::concat(sources.datasets())?)),
        (mode, None) => Err(Error::InvalidArgument(format!(
            "reference mode {mode:?} needs a reference set"
        ))),
    }
}

/// Scores `model` against `target` with `measure`. `sample` is the data the
/// model stands for; only MMD measures read it.
pub fn score_model(
    model: &Model,
    target: &ReferenceSet,
    sample: &Dataset,
    recipe: &ValuationRecipe,
    probe: Option<&Model>,
) -> Result<f64> {
    let data = target.dataset();
    let value = match recipe.measure {
        Measure::Leep => {
            let probs = model.predict_proba(data.features())?;
            leep(probs.view(), target.labels()?, data.num_classes())?
        }
        Measure::LogMe => {
            let f = model.extract_features(data.features())?;
            logme(f.view(), target.labels()?, data.num_classes())?
        }
        Measure::EtranEnergy => etran_energy(model.extract_features(data.features())?.view())?,
        Measure::NegMmd | Measure::CondNegMmd => {
            let (xs, xr) = mmd_inputs(sample, data, probe)?;
            let labels = if recipe.measure == Measure::CondNegMmd {
                Some((sample.labels(), target.labels()?))
            } else {
                None
            };
            neg_mmd(xs.view(), xr.view(), &recipe.kernel, labels)?
        }
    };
    Ok(value.value)
}

fn mmd_inputs(sample: &Dataset, reference: &Dataset, probe: Option<&Model>) -> Result<(Array2<f64>, Array2<f64>)> {
    match probe {
        Some(p) => Ok((
            p.extract_features(sample.features())?,
            p.extract_features(reference.features())?,
        )),
        None => Ok((sample.features().to_owned(), reference.features().to_owned())),
    }
}

/// One source's score and the wall-clock time spent producing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub score: f64,
    pub seconds: f64,
}

/// Per-source scores `T(m_s, D*)`, each `m_s` trained on its own source.
/// Sources are processed concurrently; results keep source order.
pub fn annotator_scores(
    sources: &SourceCollection,
    reference: &ReferenceSet,
    recipe: &ValuationRecipe,
    train_config: &TrainConfig,
) -> Result<Vec<SourceScore>> {
    recipe.validate()?;
    ensure!(
        recipe.phi == Phi::TrainSmallModel && recipe.varphi == Varphi::ReferenceSet,
        InvalidArgument,
        "annotator valuation needs phi=train_small_model and varphi=reference_set"
    );
    ensure!(
        reference.dataset().dim() == sources.dim() && reference.dataset().num_classes() == sources.num_classes(),
        DimensionMismatch,
        "reference set does not match the sources' d or C"
    );
    let probe = match (recipe.measure, recipe.mmd_space) {
        (Measure::NegMmd | Measure::CondNegMmd, MmdSpace::SharedProbe) => {
            reference.labels()?;
            Some(train_parts(&[(reference.dataset(), 1.0)], train_config)?)
        }
        _ => None,
    };
    sources
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|source| {
            let start = Instant::now();
            let needs_model = !matches!(recipe.measure, Measure::NegMmd | Measure::CondNegMmd);
            let score = if needs_model {
                let model = train_parts(&[(&source.dataset, 1.0)], train_config)?;
                score_model(&model, reference, &source.dataset, recipe, None)?
            } else {
                let placeholder = Model::zeros(sources.dim(), sources.num_classes());
                score_model(&placeholder, reference, &source.dataset, recipe, probe.as_ref())?
            };
            Ok(SourceScore {
                score,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context("annotator scoring"))
}

/// Annotator valuation: train `m_s` per source, score against the
/// reference, form the posterior. A single source gets the point mass.
pub fn annotator_valuation(
    sources: &SourceCollection,
    reference: &ReferenceSet,
    recipe: &ValuationRecipe,
    prior: &Prior,
    tau: Tau,
    train_config: &TrainConfig,
) -> Result<Valuation> {
    let scores: Vec<f64> = annotator_scores(sources, reference, recipe, train_config)?
        .into_iter()
        .map(|s| s.score)
        .collect();
    finish(sources.ids(), prior, scores, tau)
}

fn finish(ids: Vec<String>, prior: &Prior, scores: Vec<f64>, tau: Tau) -> Result<Valuation> {
    let prior = prior.resolve(ids.len())?;
    if ids.len() == 1 {
        return Valuation::from_distribution(ids, prior, scores, 1.0, vec![1.0]);
    }
    let tau = tau.resolve(ids.len())?;
    Valuation::new(ids, prior, scores, tau)
}

/// The augmented copy `D_s = {(s(x), y)}` of the training set.
pub fn materialize(augmentor: &Augmentor, train_set: &Dataset, seed: u64) -> Result<Dataset> {
    train_set.with_features(augmentor.apply(train_set.features(), seed)?)
}

/// Per-augmentor scores `T(m^u, D_s)`. All augmentors share `seed`, so
/// random operators see the same underlying noise draws.
pub fn augmentation_scores(
    train_set: &Dataset,
    augmentors: &[Augmentor],
    universal_model: &Model,
    measure: Measure,
    seed: u64,
) -> Result<Vec<SourceScore>> {
    ensure!(!augmentors.is_empty(), InvalidArgument, "no augmentors");
    ensure!(
        universal_model.feature_dim() == train_set.dim() && universal_model.num_classes() == train_set.num_classes(),
        DimensionMismatch,
        "universal model is {}×{}, training set has d={} and C={}",
        universal_model.feature_dim(),
        universal_model.num_classes(),
        train_set.dim(),
        train_set.num_classes()
    );
    let recipe = ValuationRecipe::augmentation(measure);
    let original = ReferenceSet::labeled(train_set.clone());
    augmentors
        .par_iter()
        .map(|aug| {
            let start = Instant::now();
            let augmented = materialize(aug, train_set, seed)?;
            let score = match measure {
                // MMD compares the augmented copy with the original set.
                Measure::NegMmd | Measure::CondNegMmd => {
                    score_model(universal_model, &original, &augmented, &recipe, None)?
                }
                _ => score_model(
                    universal_model,
                    &ReferenceSet::labeled(augmented.clone()),
                    &augmented,
                    &recipe,
                    None,
                )?,
            };
            Ok(SourceScore {
                score,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.context("augmentor scoring"))
}

/// Augmentation valuation over `augmentors`.
pub fn augmentation_valuation(
    train_set: &Dataset,
    augmentors: &[Augmentor],
    universal_model: &Model,
    measure: Measure,
    prior: &Prior,
    tau: Tau,
    seed: u64,
) -> Result<Valuation> {
    let scores = augmentation_scores(train_set, augmentors, universal_model, measure, seed)?
        .into_iter()
        .map(|s| s.score)
        .collect();
    let ids = augmentors.iter().map(|a| a.to_string()).collect();
    finish(ids, prior, scores, tau)
}
