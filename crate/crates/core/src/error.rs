use thiserror::Error;

/// Errors surfaced by configuration, model and solver entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed cone program: {0}")]
    MalformedProgram(String),

    #[error("no canonical factor graph exists: {0}")]
    NoCanonicalGraph(String),

    #[error("allocation is structurally unrepairable: {0}")]
    Unrepairable(String),

    #[error("instance exceeds the enumeration guardrail: {0}")]
    GuardrailExceeded(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
