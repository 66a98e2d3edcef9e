use std::path::PathBuf;

use crate::bench::ExperimentReport;
use crate::decomp::{Decomposition, SolverTrace};
use crate::esm::StrategyMatrix;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix that must be symmetric positive definite was not.
    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("decomposition did not reach the residual target: residual {residual:.3e} > gamma {gamma:.3e} after {outer_iterations} outer iterations")]
    NonConvergence {
        residual: f64,
        gamma: f64,
        outer_iterations: usize,
        /// Best iterate found before giving up.
        best: Box<(Decomposition, SolverTrace)>,
    },

    #[error(
        "strategy optimizer stopped after {iterations} iterations without meeting its tolerance"
    )]
    StrategyNonConvergence {
        iterations: usize,
        best: Box<StrategyMatrix>,
    },

    /// An experiment stopped early; `partial` holds the mechanisms that
    /// finished before `source` was raised.
    #[error("experiment aborted: {source}")]
    Experiment {
        source: Box<Error>,
        partial: Box<ExperimentReport>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
