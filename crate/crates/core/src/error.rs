//! Crate-wide error type.
//!
//! Errors split into two families that the CLI maps onto exit codes:
//! validation problems (bad arguments, malformed files, models that fail
//! their preconditions) exit with 2, numerical failures (rank-deficient
//! fits, empty regions, solvers that stall) exit with 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("subset must be non-empty with unique in-range sensor indices")]
    InvalidSubset,

    #[error("sensor subset {subset:?} is rank-deficient (singular value ratio {ratio:.3e})")]
    SingularFit { subset: Vec<usize>, ratio: f64 },

    #[error("ellipsoid shape matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("confidence region is empty")]
    EmptyRegion,

    #[error("model is not 2q-observable; offending subsets: {witnesses:?}")]
    NotObservable { witnesses: Vec<Vec<usize>> },

    #[error("model is 2q-observable; no ambiguity certificate exists")]
    Observable,

    #[error("model is not homogeneous: {0}")]
    NotHomogeneous(String),

    #[error("no level of the inconsistency bound keeps the region radius at or below delta (radius {radius:.6} at the smallest level)")]
    NoFeasibleLevel { radius: f64 },

    #[error("region radius never exceeded delta up to level {phi_cap:.3e}; bracketing failed")]
    BracketFailed { phi_cap: f64 },

    #[error("{what} did not converge within {iterations} iterations (best value {best:.6e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        best: f64,
    },

    #[error("rate fit needs at least 3 usable points, found {0}")]
    TooFewRatePoints(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI reports for this error: 2 = validation, 3 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidModel(_)
            | Error::InvalidScenario(_)
            | Error::InvalidConfig(_)
            | Error::InvalidArgument(_)
            | Error::InvalidSubset
            | Error::Observable
            | Error::NotObservable { .. }
            | Error::NotHomogeneous(_)
            | Error::TooFewRatePoints(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::SingularFit { .. }
            | Error::NotPositiveDefinite
            | Error::EmptyRegion
            | Error::NoFeasibleLevel { .. }
            | Error::BracketFailed { .. }
            | Error::NoConvergence { .. } => 3,
        }
    }
}
