use std::io;

use thiserror::Error;

pub type Result<T, E = VadError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VadError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unsupported tensor rank {0} (at most 2)")]
    UnsupportedRank(usize),

    #[error("reduction over zero elements")]
    EmptyReduction,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid covariance: lambda {value} on observed dimension {dim}")]
    InvalidCovariance { dim: usize, value: f64 },

    #[error("invalid KL value {0} (must be non-negative)")]
    InvalidKl(f64),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl VadError {
    pub fn dim(msg: impl Into<String>) -> Self {
        VadError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        VadError::Config(msg.into())
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        VadError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        VadError::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data/format, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            VadError::Config(_) | VadError::InvalidKl(_) | VadError::InvalidCovariance { .. } => 2,
            VadError::Dimension(_)
            | VadError::UnsupportedRank(_)
            | VadError::Parse { .. }
            | VadError::Format { .. }
            | VadError::Io(_) => 3,
            VadError::EmptyReduction
            | VadError::NonScalarBackward(_)
            | VadError::NonFinite { .. }
            | VadError::Numeric(_) => 4,
        }
    }
}
