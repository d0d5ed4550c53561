use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Every retained periodogram bin is zero (constant input).
    #[error("degenerate spectrum: all retained periodogram bins are zero")]
    DegenerateSpectrum,

    #[error("degenerate kde: {0}")]
    DegenerateKde(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient calibration data: {0}")]
    InsufficientCalibrationData(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("solver diverged: {0}")]
    SolverDivergence(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("unsupported dimension {dim}: exact divergence is limited to D <= {max}")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Coarse classification used for CLI exit codes and machine-readable errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    InvalidInput,
    Config,
    Format,
    Io,
    Solver,
    Training,
    Calibration,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::InvalidInput => "invalid-input",
            ErrorCategory::Config => "config",
            ErrorCategory::Format => "format",
            ErrorCategory::Io => "io",
            ErrorCategory::Solver => "solver",
            ErrorCategory::Training => "training",
            ErrorCategory::Calibration => "calibration",
        }
    }

    /// Process exit status for command-line tools. `0` is success and `2` is
    /// left for usage errors.
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorCategory::InvalidInput => 3,
            ErrorCategory::Config => 4,
            ErrorCategory::Format => 5,
            ErrorCategory::Io => 6,
            ErrorCategory::Solver => 7,
            ErrorCategory::Training => 8,
            ErrorCategory::Calibration => 9,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidInput(_)
            | Error::DegenerateSpectrum
            | Error::DegenerateKde(_)
            | Error::UnsupportedDimension { .. } => ErrorCategory::InvalidInput,
            Error::Config(_) => ErrorCategory::Config,
            Error::InsufficientCalibrationData(_) => ErrorCategory::Calibration,
            Error::SolverFailure(_) | Error::SolverDivergence(_) => ErrorCategory::Solver,
            Error::TrainingDiverged { .. } => ErrorCategory::Training,
            Error::Format(_) | Error::Corruption(_) => ErrorCategory::Format,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
