use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch: expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("cannot discretize column `{0}`: all quantiles are equal")]
    Discretization(String),
    #[error("antecedent mining produced an empty pool: {0}")]
    Mining(String),
    #[error("every member of class `{0}` has a non-finite loss")]
    Evaluation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
