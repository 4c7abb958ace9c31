use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    /// Marginal utility of an alpha-fair EU at zero received power.
    #[error("unbounded marginal utility at zero received power")]
    UnboundedDerivative,

    /// PAT/MPAT need at least three agents (ET plus two EUs).
    #[error("mechanism needs at least 3 agents, got {agents}; add a virtual agent")]
    VirtualAgentRequired { agents: usize },

    #[error("scenario unsatisfiable: {0}")]
    UnsatisfiableScenario(String),

    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("missing key `{0}`")]
    MissingKey(String),

    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
