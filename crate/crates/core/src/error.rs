use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown champion type {found:?} at line {line}; expected one of: {legal}")]
    UnknownChampionType {
        line: u64,
        found: String,
        legal: String,
    },

    #[error("records for user {user} are not sorted by timestamp")]
    Unsorted { user: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("tensor has no observed slices")]
    EmptyObservation,

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("rank selection failed: {0}")]
    RankSelection(String),

    #[error("training diverged: {0}")]
    NonFiniteLoss(String),

    #[error("binary target has a single class in the training set")]
    SingleClass,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate target range: min = max = {0}")]
    DegenerateRange(f64),

    #[error("unknown target {0:?}; expected one of win, end_of_session, kda, kills, deaths, assists")]
    UnknownTarget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
