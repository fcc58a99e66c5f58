use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Problems with a CT4F file (or a payload embedded in one).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes, not a CT4F file")]
    BadMagic,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated file: header declares {expected} payload bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("size mismatch: header declares {expected} payload bytes, file holds {found}")]
    SizeMismatch { expected: u64, found: u64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("format error in {path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("least-squares solver error: {0}")]
    Solver(String),
    #[error("step size too large: objective increased on {0} consecutive iterations")]
    StepSize(usize),
    #[error("operator defect: non-positive curvature {0:e} in conjugate gradient")]
    OperatorDefect(f64),
    #[error("divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },
    #[error("training error at sample {index}: {what}")]
    Training { index: usize, what: String },
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format { path: path.into(), source }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}

macro_rules! geometry {
    ($($arg:tt)*) => {
        $crate::error::Error::Geometry(format!($($arg)*))
    };
}

pub(crate) use geometry;
pub(crate) use invalid;
