use std::path::PathBuf;

use thiserror::Error;

use crate::image_io::ImageError;
use crate::weights::WeightsError;

/// Process exit codes. Each failure path has its own code.
pub mod exit {
    pub const OK: i32 = 0;
    /// No evaluable pairs, weights incompatible with the configuration, or
    /// an unknown gradcheck target.
    pub const REJECTED: i32 = 1;
    /// `eval` finished but some pairs could not be evaluated.
    pub const PARTIAL: i32 = 2;
    pub const NON_FINITE_LOSS: i32 = 3;
    /// Unreadable or malformed input files, unwritable outputs.
    pub const IO: i32 = 4;
    /// At least one gradient check failed.
    pub const CHECK_FAILED: i32 = 5;
    pub const USAGE: i32 = 64;
    /// A numeric failure inside the core library.
    pub const INTERNAL: i32 = 70;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("no evaluable prediction/ground-truth pairs: {0}")]
    NoPairs(String),

    #[error("weights incompatible with configuration: {0}")]
    Mismatch(String),

    #[error("unknown gradcheck target `{0}`")]
    UnknownOp(String),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("{failed} of {total} gradient checks failed")]
    CheckFailed { failed: usize, total: usize },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },

    #[error("{path}: {source}")]
    Weights {
        path: PathBuf,
        #[source]
        source: WeightsError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] sodkit_core::TensorError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NoPairs(_) | CliError::Mismatch(_) | CliError::UnknownOp(_) => exit::REJECTED,
            CliError::NonFiniteLoss { .. } => exit::NON_FINITE_LOSS,
            CliError::CheckFailed { .. } => exit::CHECK_FAILED,
            CliError::Usage(_) => exit::USAGE,
            CliError::Image { .. }
            | CliError::Weights { .. }
            | CliError::Io { .. }
            | CliError::Dataset(_) => exit::IO,
            CliError::Core(_) => exit::INTERNAL,
        }
    }

    /// Short machine-readable category used on the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::NoPairs(_) => "no_pairs",
            CliError::Mismatch(_) => "weights_mismatch",
            CliError::UnknownOp(_) => "unknown_op",
            CliError::NonFiniteLoss { .. } => "non_finite_loss",
            CliError::CheckFailed { .. } => "gradcheck_failed",
            CliError::Image { .. } => "image",
            CliError::Weights { .. } => "weights",
            CliError::Io { .. } => "io",
            CliError::Dataset(_) => "dataset",
            CliError::Usage(_) => "usage",
            CliError::Core(_) => "internal",
        }
    }

    /// `error <kind>: <message>` on a single line.
    pub fn line(&self) -> String {
        format!("error {}: {}", self.kind(), one_line(&self.to_string()))
    }
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
