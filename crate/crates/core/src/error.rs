use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rotation mean is rank deficient (antipodal or degenerate inputs)")]
    DegenerateRotationMean,

    #[error("need at least 3 pairs, got {0}")]
    TooFewPairs(usize),

    #[error("frame points are collinear; rotation about the line is unobservable")]
    CollinearPoints,

    #[error("cost increased for 5 consecutive iterations")]
    NonDecreasingCost,

    #[error("no hypothesis gathered 3 or more inliers")]
    NoConsensus,

    #[error("every depth point was rejected at iteration {0}")]
    NoCorrespondences(usize),

    #[error("no rays hit the scene; surface model is empty")]
    EmptyModel,

    #[error("could not place object {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },

    #[error("no ground-truth pose for frame {0}")]
    MissingGroundTruth(i64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit code: 1 for bad configuration or inputs that violate a
    /// precondition, 2 for I/O and unreadable files, 3 for anything that
    /// should have been impossible.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. }
            | Error::InvalidInput(_)
            | Error::PlacementFailure { .. }
            | Error::EmptyModel
            | Error::MissingGroundTruth(_) => 1,
            Error::Io { .. } | Error::Parse { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
