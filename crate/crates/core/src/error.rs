use thiserror::Error;

/// Errors raised by model evaluation, problem construction and solving.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("non-finite value at step {step}, component {component}")]
    NonFinite { step: usize, component: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter set: {}", .0.join("; "))]
    InvalidParameters(Vec<String>),

    #[error("parameter override parse error: {0}")]
    Parse(String),

    #[error("inconsistent problem options: {0}")]
    Options(String),

    #[error("solver failed at step {step}: {status}")]
    Solve { step: usize, status: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            what,
            detail: detail.into(),
        }
    }
}
