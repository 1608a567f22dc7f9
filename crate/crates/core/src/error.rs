use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: record {id:?}: invalid field `{field}`: {message}")]
    Schema {
        line: usize,
        id: Option<String>,
        field: String,
        message: String,
    },

    #[error("invalid trajectory {id:?}: {message}")]
    InvalidTrajectory { id: String, message: String },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding provider failed on keyframe {index}: {message}")]
    Embedding { index: usize, message: String },

    #[error("reward function failed at step {step}: {message}")]
    RewardFn { step: usize, message: String },

    #[error("evaluator transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("could not parse evaluator response ({reason}); raw response: {raw:?}")]
    ResponseParse { reason: String, raw: String },

    #[error("all {0} crowd-check queries failed")]
    AllQueriesFailed(usize),

    #[error("unknown predicate `{0}` in rule template")]
    UnmatchedPredicate(String),

    #[error("MAP inference did not converge in {iterations} iterations (gap bound {gap:.3e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        best: [f64; 3],
    },

    #[error("re-simulation diverged at step {step}: state norm {norm:.3} exceeds bound {bound}")]
    Divergence { step: usize, norm: f64, bound: f64 },

    #[error("non-finite loss in member {member}, epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        member: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("preference batch contains only indecision records; filter them before training")]
    AllIndecision,

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: line {line}: {message}")]
    Metrics {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same request could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}
