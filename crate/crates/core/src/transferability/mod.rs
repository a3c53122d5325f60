//! Transferability measures `T(m, D)`: cheap scalar predictors of how well a
//! model transfers to a labeled (or unlabeled) sample set. Higher is better.
//!
//! | measure        | input                         | labels |
//! |----------------|-------------------------------|--------|
//! | LEEP           | class probabilities `n × Z`   | yes    |
//! | LogME          | extracted features `n × k`    | yes    |
//! | ETran energy   | extracted features `n × k`    | no     |
//! | −MMD²          | two sample matrices           | optional (class-conditional) |
//!
//! Every scorer is a pure function of its inputs and invariant to a joint
//! permutation of rows and labels.

mod energy;
mod leep;
mod logme;
mod mmd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use energy::etran_energy;
pub use leep::{leep, LEEP_FLOOR};
pub use logme::{
    log_evidence, log_evidence_with, logme, LogMeFit, LogMeOptions, LOGME_EVIDENCE_TOLERANCE, LOGME_MAX_ITERATIONS,
    LOGME_TOLERANCE,
};
pub use mmd::{median_heuristic_bandwidth, neg_mmd, rbf_kernel, squared_distance, Bandwidth, KernelSpec};

/// Identifies a transferability measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Leep,
    #[serde(rename = "logme")]
    LogMe,
    EtranEnergy,
    NegMmd,
    CondNegMmd,
}

impl Measure {
    pub fn needs_labels(self) -> bool {
        !matches!(self, Measure::EtranEnergy | Measure::NegMmd)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Leep => "leep",
            Measure::LogMe => "logme",
            Measure::EtranEnergy => "etran_energy",
            Measure::NegMmd => "neg_mmd",
            Measure::CondNegMmd => "cond_neg_mmd",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = Error;

    /// Accepts both the canonical names and the short CLI aliases
    /// (`etran`, `mmd`, `cmmd`).
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "leep" => Ok(Measure::Leep),
            "logme" => Ok(Measure::LogMe),
            "etran" | "etran_energy" | "energy" => Ok(Measure::EtranEnergy),
            "mmd" | "neg_mmd" => Ok(Measure::NegMmd),
            "cmmd" | "cond_neg_mmd" => Ok(Measure::CondNegMmd),
            other => Err(Error::InvalidArgument(format!("unknown measure {other:?}"))),
        }
    }
}

/// A computed transferability value, tagged with the measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferabilityScore {
    pub value: f64,
    pub measure: Measure,
}
