//! Data distribution valuation.
//!
//! Sources of labeled data are valued by a generalized-Bayes posterior
//! `P(s) ∝ p(s) · exp(T_s / τ)`, where the loss is a transferability score
//! `T_s` of a model against a sample set. The posterior then weights the
//! sources (or augmentors) when training a final model.
//!
//! * [`datamodel`]: datasets, source collections and their file formats.
//! * [`classifier`]: the softmax-regression model and trainer.
//! * [`transferability`]: LEEP, LogME, ETran energy and MMD scores.
//! * [`valuation`]: posteriors, temperatures and recipes.
//! * [`continual`]: recursive updates over a data stream.
//! * [`augment`]: augmentors and augmented training.
//! * [`synth`]: synthetic mixtures, label noise and splits.
//! * [`harness`]: end-to-end experiments and reports.

pub mod augment;
pub mod classifier;
pub mod continual;
pub mod datamodel;
mod error;
pub mod harness;
pub mod synth;
pub mod transferability;
pub mod valuation;

pub use error::{Error, Result};
