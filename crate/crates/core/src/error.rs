use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("signal has {len} samples but the window needs at least {needed}")]
    SignalTooShort { len: usize, needed: usize },

    #[error("signal is empty")]
    SignalEmpty,

    #[error("squared-window overlap-add is {value:e} at interior sample {index}")]
    DegenerateWindowSum { index: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("spectrum is not Hermitian: bin {bin} deviates by {deviation:e}")]
    NonHermitianInput { bin: usize, deviation: f64 },

    #[error("non-finite activation produced by {0}")]
    NonFiniteActivation(String),

    #[error("forward activations for this value are not recorded on the tape")]
    GraphNotRecorded,

    #[error("loss needs at least one score")]
    EmptyBatch,

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification of errors, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad arguments or configuration.
    Usage,
    /// Missing, malformed or unsuitable input data.
    Data,
    /// Numerical breakdown.
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numeric => 3,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) => ErrorCategory::Usage,
            Error::SignalTooShort { .. }
            | Error::SignalEmpty
            | Error::ShapeMismatch(_)
            | Error::NonHermitianInput { .. }
            | Error::EmptyBatch
            | Error::UnsupportedFormat(_)
            | Error::Malformed { .. }
            | Error::Io { .. } => ErrorCategory::Data,
            Error::DegenerateWindowSum { .. }
            | Error::NonFiniteActivation(_)
            | Error::GraphNotRecorded
            | Error::NonFiniteLoss { .. } => ErrorCategory::Numeric,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
