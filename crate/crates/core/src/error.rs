use thiserror::Error;

/// Errors raised by the estimation, resampling and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("invalid truth parameters: {0}")]
    InvalidTruth(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("population {index} is empty")]
    EmptyPopulation { index: usize },
    #[error("population {index} has a single observation; its within variance is unavailable")]
    SingletonPopulation { index: usize },
    #[error("at least two populations are required (got {k})")]
    DegenerateK { k: usize },
    #[error("variance estimate is not positive ({value})")]
    NonPositiveVariance { value: f64 },
    #[error("scale must be positive (got {value})")]
    NonPositiveScale { value: f64 },
    #[error("{replicates} bootstrap replicates are too few for level {level} (need at least {required})")]
    InsufficientReplicates {
        replicates: usize,
        level: f64,
        required: usize,
    },
    #[error("exhaustive enumeration needs {outcomes} outcomes, limit is {limit}")]
    TooLarge { outcomes: f64, limit: usize },
    #[error("between-population variance gamma is zero; the Berry-Esseen bound is undefined")]
    ZeroGamma,
    #[error("rate table needs at least 3 distinct K values (got {got})")]
    GridTooSmall { got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
