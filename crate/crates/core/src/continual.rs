//! Continual valuation: the posterior is updated recursively as each step
//! of a data stream arrives,
//!
//! ```text
//! P_t(s) ∝ P_{t−1}(s) · exp(T_t(s) / τ)
//! ```
//!
//! using only the current step's data. Because the exponentials multiply,
//! folding `T` steps equals one posterior on the summed scores.

use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::datamodel::SourceCollection;
use crate::error::{ensure, Error, Result};
use crate::valuation::{annotator_scores, gbv_posterior, Prior, ReferenceSet, Valuation, ValuationRecipe};

/// The per-source subsets `D_{s,t}` received at step `t` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStep {
    pub index: usize,
    pub sources: SourceCollection,
}

/// Posteriors `P_0, …, P_T`; `P_0` is the prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrajectory {
    states: Vec<Valuation>,
}

impl PosteriorTrajectory {
    pub fn new(source_ids: Vec<String>, prior: Vec<f64>, tau: f64) -> Result<Self> {
        let m = prior.len();
        let initial = Valuation::from_distribution(source_ids, prior.clone(), vec![0.0; m], tau, prior)?;
        Ok(Self { states: vec![initial] })
    }

    /// Number of computed steps (excluding the prior).
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// `P_t`; `t = 0` is the prior.
    pub fn at(&self, t: usize) -> Option<&Valuation> {
        self.states.get(t)
    }

    pub fn last(&self) -> &Valuation {
        self.states.last().expect("trajectory always holds the prior")
    }

    pub fn states(&self) -> &[Valuation] {
        &self.states
    }

    /// Folds one step's scores into the trajectory.
    pub fn push_scores(&mut self, scores: &[f64]) -> Result<&Valuation> {
        let tau = self.last().tau();
        let next = cgbv_update(self.last(), scores, tau)?;
        self.states.push(next);
        Ok(self.last())
    }
}

/// One recursive update. The result's prior is `previous`'s posterior.
pub fn cgbv_update(previous: &Valuation, step_scores: &[f64], tau: f64) -> Result<Valuation> {
    ensure!(
        step_scores.len() == previous.len(),
        DimensionMismatch,
        "{} step scores for {} sources",
        step_scores.len(),
        previous.len()
    );
    Valuation::new(
        previous.source_ids().to_vec(),
        previous.posterior().to_vec(),
        step_scores.to_vec(),
        tau,
    )
}

/// Runs continual valuation over a stream. Each step is consumed, scored
/// with `recipe` exactly as a one-shot annotator valuation of that step's
/// data, and dropped before the next step is pulled.
pub fn run_stream<I>(
    stream: I,
    reference: &ReferenceSet,
    recipe: &ValuationRecipe,
    prior: &Prior,
    tau: f64,
    train_config: &TrainConfig,
) -> Result<PosteriorTrajectory>
where
    I: IntoIterator<Item = StreamStep>,
{
    let mut trajectory: Option<PosteriorTrajectory> = None;
    for (t, step) in stream.into_iter().enumerate() {
        let ids = step.sources.ids();
        let traj = match &mut trajectory {
            Some(traj) => {
                ensure!(
                    traj.last().source_ids() == ids.as_slice(),
                    InvalidArgument,
                    "step {} covers sources {:?}, expected {:?}",
                    t + 1,
                    ids,
                    traj.last().source_ids()
                );
                traj
            }
            None => trajectory.insert(PosteriorTrajectory::new(ids.clone(), prior.resolve(ids.len())?, tau)?),
        };
        let scores: Vec<f64> = annotator_scores(&step.sources, reference, recipe, train_config)
            .map_err(|e| e.context(format!("stream step {}", t + 1)))?
            .into_iter()
            .map(|s| s.score)
            .collect();
        traj.push_scores(&scores)?;
    }
    trajectory.ok_or_else(|| Error::InvalidArgument("empty stream".into()))
}

/// `P_1`: the valuation from the first step only.
pub fn baseline_no_update(trajectory: &PosteriorTrajectory) -> Result<Valuation> {
    trajectory
        .at(1)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no computed steps".into()))
}

/// `(P_1 + … + P_t) / t`.
pub fn baseline_average(trajectory: &PosteriorTrajectory, t: usize) -> Result<Valuation> {
    ensure!(
        t >= 1 && t <= trajectory.steps(),
        InvalidArgument,
        "average over {t} steps requested, trajectory has {}",
        trajectory.steps()
    );
    let m = trajectory.last().len();
    let mut mean = vec![0.0; m];
    for state in &trajectory.states()[1..=t] {
        for (acc, p) in mean.iter_mut().zip(state.posterior()) {
            *acc += p / t as f64;
        }
    }
    let first = &trajectory.states()[0];
    Valuation::from_distribution(
        first.source_ids().to_vec(),
        first.prior().to_vec(),
        vec![0.0; m],
        first.tau(),
        mean,
    )
}

/// Single-shot posterior on the summed per-step scores.
pub fn batch_posterior(prior: &[f64], step_scores: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
    ensure!(!step_scores.is_empty(), InvalidArgument, "no steps");
    let mut total = vec![0.0; prior.len()];
    for scores in step_scores {
        ensure!(scores.len() == prior.len(), DimensionMismatch, "ragged step scores");
        for (acc, s) in total.iter_mut().zip(scores) {
            *acc += s;
        }
    }
    gbv_posterior(prior, &total, tau)
}
