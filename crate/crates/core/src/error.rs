use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: expected {expected} {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("intensity contract violated: {0}")]
    ContractViolation(String),

    #[error("infeasible drift: coefficient sum {sum} is not below 1")]
    InfeasibleDrift { sum: f64 },

    #[error("drift construction failed: {0}")]
    DriftConstruction(String),

    #[error("infeasible contraction: constants sum to {sum}, which is not below 1")]
    InfeasibleContraction { sum: f64 },

    #[error("similarity constant requires a volatility floor ω")]
    MissingFloor,

    #[error("inconsistent input: {0}")]
    Inconsistent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
