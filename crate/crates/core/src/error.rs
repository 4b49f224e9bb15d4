use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("malformed {what}: {detail}")]
    Malformed { what: String, detail: String },

    #[error("attribute count mismatch: expected {expected} floats, found {found}")]
    AttributeCount { expected: usize, found: usize },

    #[error("non-finite value in field `{field}` of primitive {index}")]
    NonFinite { field: &'static str, index: usize },

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("scene failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<crate::scene::Violation>),

    #[error("invalid scene spec: {0}")]
    Spec(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("network weights: {0}")]
    Network(String),

    #[error("inpainting backend failed: {0}")]
    Backend(String),

    #[error("{0}")]
    Removal(String),

    #[error("empty pixel set for {0}")]
    EmptyMask(&'static str),

    #[error("forward cache is stale: {0}")]
    StaleCache(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("optimization diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn malformed(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
