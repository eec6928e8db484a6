use thiserror::Error;

/// Everything that can go wrong while building or running a simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("worker index {index} out of range for a pool of {workers} workers")]
    WorkerOutOfRange { index: usize, workers: usize },

    #[error("invalid rate {0}: worker rates must be finite and positive")]
    InvalidRate(f64),

    #[error("a superarm must contain at least one worker")]
    EmptySuperarm,

    #[error("worker {0} appears more than once in the superarm")]
    DuplicateWorker(usize),

    #[error("order statistic k = {k} must lie in [1, {workers}]")]
    OrderOutOfRange { k: usize, workers: usize },

    #[error("superarm size {size} must lie in [1, {workers}]")]
    SuperarmSizeOutOfRange { size: usize, workers: usize },

    #[error(
        "exact inclusion-exclusion is capped at {cap} workers (got {len}); \
         use a smaller superarm or a sampled estimate"
    )]
    TooManyWorkers { len: usize, cap: usize },

    #[error("worker {0} has never been pulled, so its confidence radius is undefined")]
    UnpulledWorker(usize),

    #[error("iteration index must be at least 1")]
    ZeroIteration,

    #[error("expected {expected} responses for the superarm, got {got}")]
    ResponseCountMismatch { expected: usize, got: usize },

    #[error("learning rate times convexity must be below 1 for the bound to converge (eta*c = {0})")]
    NonConvergent(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("data matrix is rank deficient; regenerate with a different seed")]
    RankDeficient,

    #[error("at least one gradient is required for a model update")]
    NoGradients,

    #[error("minimum suboptimality gap is zero, the regret bound is undefined")]
    ZeroGap,

    #[error("the regret bound assumes every worker rate is at least 1 (minimum rate {0})")]
    TheoremAssumption(f64),

    #[error("trace does not match the schedule: {0}")]
    TraceMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
