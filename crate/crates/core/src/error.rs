use thiserror::Error;

pub type Result<T, E = CrnError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrnError {
    #[error("rate graph is not strongly connected: {0}")]
    NonIrreducible(String),
    #[error("species {species} has arity {arity}; arities must lie in 1..={max}")]
    BadArity { species: usize, arity: u32, max: u32 },
    #[error("negative or non-finite rate {value} at {location}")]
    NegativeRate { location: String, value: f64 },
    #[error("{count} species exceed the configured limit of {max}")]
    TooManySpecies { count: usize, max: usize },
    #[error("malformed rate matrix: {0}")]
    Malformed(String),
    #[error("falling factorial {y}^({k}) overflows 64 bits")]
    Overflow { y: u64, k: u32 },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("Neumann series did not converge after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("the fast species set is empty")]
    EmptyFastSet,
    #[error("the network has no slow (arity 1) species")]
    NoSlowSpecies,
    #[error("the source/sink index 0 cannot be eliminated")]
    CannotEliminateSource,
    #[error("index {0} is not part of the rate matrix")]
    UnknownIndex(usize),
    #[error("bound vectors failed verification: {0}")]
    VerificationFailed(String),
    #[error("event budget of {0} exceeded")]
    EventBudgetExceeded(u64),
    #[error("averaging window [{eta}, {t}] is empty")]
    EmptyWindow { eta: f64, t: f64 },
    #[error("state component {index} became non-positive ({value:e}) at t = {time}")]
    NonPositiveState { index: usize, value: f64, time: f64 },
    #[error("point component {index} is not positive ({value})")]
    NonPositivePoint { index: usize, value: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CrnError {
    fn from(e: std::io::Error) -> Self {
        CrnError::Io(e.to_string())
    }
}
