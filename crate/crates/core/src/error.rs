use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("empty trace")]
    Empty,
    #[error("line {line}: malformed timestamp {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: timestamp {value} is smaller than the previous one (unsorted trace)")]
    Unsorted { line: usize, value: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("jain index is undefined for an empty or all-zero rate vector")]
    Undefined,
    #[error("negative rate {0}")]
    NegativeRate(f64),
    #[error("empty summary window")]
    EmptyWindow,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown controller {0:?}")]
    UnknownController(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite estimator input")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action index {0} outside 0..=4")]
    ActionOutOfRange(i64),
    #[error("episode is over; send reset")]
    EpisodeDone,
    #[error("no active episode; send reset")]
    NotStarted,
    #[error(transparent)]
    Config(#[from] ConfigError),
}
