use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index {index} out of range for {op} (limit {limit})")]
    Index {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("degenerate element: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("solver diverged at increment {increment}: {detail}")]
    Divergence { increment: usize, detail: String },

    #[error("non-finite prediction at rollout step {step}")]
    RolloutNonFinite { step: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::NonFinite(_)
            | Error::Divergence { .. }
            | Error::RolloutNonFinite { .. }
            | Error::NonScalarRoot(_) => ErrorKind::Numerical,
            Error::Shape { .. }
            | Error::Index { .. }
            | Error::Degenerate(_)
            | Error::Empty(_)
            | Error::Graph(_)
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Parse { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
