use thiserror::Error;

/// Errors raised by the rearrangement and orbit machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("not in space: {0}")]
    NotInSpace(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("governing dilation functional not certified to vanish: {0}")]
    PhiNotVanishing(String),
    #[error("term budget exceeded: achieved error {achieved} > target {target} with {terms} terms")]
    BudgetExceeded { achieved: f64, target: f64, terms: usize },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("out of supported range: {0}")]
    Range(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
