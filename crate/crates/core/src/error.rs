use thiserror::Error;

/// Errors produced by query evaluation, mechanisms, and the game harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("answer budget exhausted after {0} queries")]
    BudgetExhausted(usize),

    #[error("update budget exhausted after {0} updates")]
    UpdateBudgetExhausted(usize),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
