use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Each variant maps to one stable error class (see [`Error::class`]) which
/// the command line prints as a greppable prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in tensor `{tensor}`")]
    NonFinite { tensor: String },

    #[error("internal consistency: {0}")]
    Internal(String),

    #[error("line {line}, column `{column}`: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot stratify: class {class} has {count} record(s), need at least 2")]
    Stratification { class: String, count: usize },

    #[error("ROC curve undefined: {0}")]
    UndefinedRoc(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidInput(_) => "invalid-input",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "numeric",
            Error::Internal(_) => "internal",
            Error::Parse { .. } => "parse",
            Error::EmptyDataset => "empty-dataset",
            Error::Stratification { .. } => "stratification",
            Error::UndefinedRoc(_) => "undefined-roc",
            Error::CorruptCheckpoint(_) | Error::UnsupportedVersion { .. } => "corrupt-checkpoint",
            Error::Divergence { .. } => "divergence",
            Error::FileNotFound(_) => "file-not-found",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }
}
