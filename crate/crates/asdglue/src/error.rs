use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value at node {node} ({point:?})")]
    NonFinite { node: usize, point: [f64; 4] },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("algorithm failure: {0}")]
    Algorithm(String),
}

pub type Result<T> = std::result::Result<T, Error>;
