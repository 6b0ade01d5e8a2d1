use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid likelihood model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    /// An exhaustive enumeration would exceed its configured budget.
    #[error("{what} exceeds budget of {limit}")]
    Budget { what: &'static str, limit: u64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("quorum arity mismatch: expected {expected} neighbor beliefs, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("deadlock at time {time}: agents {blocked:?} cannot form a quorum")]
    Deadlock { time: u64, blocked: Vec<usize> },

    #[error("horizon too short: row residual {residual:e} exceeds bound {bound:e}")]
    HorizonTooShort { residual: f64, bound: f64 },

    /// The two detectability conditions disagreed; always an implementation defect.
    #[error("detectability conditions disagree (condition1={condition1}, condition2={condition2})")]
    EquivalenceViolation { condition1: bool, condition2: bool },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
