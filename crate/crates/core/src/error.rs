use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An extent disagreed with what an operation required.
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        found: usize,
    },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("singular projection: {0}")]
    Singular(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step}")]
    NanLoss { step: usize },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("image export: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected,
            found,
        }
    }

    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command-line front end: 2 for usage and
    /// configuration problems, 1 for everything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Manifest { .. } => 2,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
