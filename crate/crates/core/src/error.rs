use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The dimension equation could not be bracketed on [1, 2].
    #[error("solver error: {0}")]
    Solver(String),

    /// Refused before allocating: the requested work exceeds the budget.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tree depth {available} is insufficient, need at least {required}")]
    InsufficientDepth { required: usize, available: usize },

    #[error("regression fit error: {0}")]
    Fit(String),

    /// Numerical self-check failed (e.g. graph continuity).
    #[error("internal consistency error: {0}")]
    Consistency(String),
}
