use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the valuation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} out of range [0, {num_classes}) at row {row}")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("labels unavailable: the reference set was built in unlabeled mode")]
    LabelsUnavailable,

    #[error("training diverged at iteration {iteration}: loss is not finite (learning rate too large?)")]
    Diverged { iteration: usize },

    #[error("LogME fixed point did not converge after {iterations} iterations (alpha={alpha}, beta={beta})")]
    NotConverged {
        iterations: usize,
        alpha: f64,
        beta: f64,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap this error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

/// Shorthand for argument validation.
macro_rules! ensure {
    ($cond:expr, $variant:ident, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err($crate::Error::$variant(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
