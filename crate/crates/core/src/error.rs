use std::path::PathBuf;

use thiserror::Error;

use crate::svm::TrainedSvm;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("cannot stratify into {folds} folds: class {class} has only {count} points")]
    Stratification {
        class: usize,
        count: usize,
        folds: usize,
    },

    #[error("subsample leaves class {class} empty")]
    Subsample { class: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("corrupted perturbation state: {0}")]
    StateCorruption(String),

    #[error("infeasible dual problem: {0}")]
    Infeasible(String),

    #[error(
        "solver did not converge after {iterations} iterations (KKT violation {violation:.3e})"
    )]
    NotConverged {
        iterations: usize,
        violation: f64,
        best: Box<TrainedSvm>,
    },

    #[error("boosting round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("binary sub-problem {name} failed: {source}")]
    SubProblem {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// True for failures caused by the numerics rather than by the input data or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numeric(_)
            | Error::NotConverged { .. }
            | Error::Infeasible(_)
            | Error::StateCorruption(_) => true,
            Error::Round { source, .. } | Error::SubProblem { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
