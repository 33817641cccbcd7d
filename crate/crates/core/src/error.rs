use std::path::PathBuf;

use galbnn_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("inference error at MC sample {sample}: {reason}")]
    Inference { sample: usize, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a {expected} file (magic {found:?})")]
    Magic {
        path: PathBuf,
        expected: &'static str,
        found: [u8; 4],
    },

    #[error("{path}: format version {found} is newer than supported version {supported}")]
    Version {
        path: PathBuf,
        found: u16,
        supported: u16,
    },

    #[error("{path}: corrupt file at byte offset {offset}: {reason}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("hash mismatch: {0}")]
    HashMismatch(String),

    #[error(transparent)]
    Nn(#[from] NnError),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Measurement(_) => "measurement",
            Error::Contract(_) => "contract",
            Error::Inference { .. } => "inference",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
            Error::Magic { .. } | Error::Corrupt { .. } => "corrupt",
            Error::Version { .. } => "version",
            Error::HashMismatch(_) => "hash-mismatch",
            Error::Nn(_) => "numeric",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
