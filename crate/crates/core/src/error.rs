use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration, malformed input files, I/O.
    Input,
    /// Numerical breakdown during compute.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    Asymmetric { asymmetry: f64 },

    #[error("cholesky failed even with jitter {last_jitter:.3e} (limit {limit:.3e})")]
    JitterExhausted { last_jitter: f64, limit: f64 },

    #[error("predictive variance {value:.3e} is below the rounding tolerance")]
    NegativeVariance { value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("requested {requested} inducing points from {available} rows")]
    MTooLarge { requested: usize, available: usize },

    #[error("dense oracle limited to {limit} points, got {n}")]
    NTooLarge { n: usize, limit: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSquare { .. } => "NotSquare",
            Error::Asymmetric { .. } => "Asymmetric",
            Error::JitterExhausted { .. } => "JitterExhausted",
            Error::NegativeVariance { .. } => "NegativeVariance",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::InvalidTarget(_) => "InvalidTarget",
            Error::MTooLarge { .. } => "MTooLarge",
            Error::NTooLarge { .. } => "NTooLarge",
            Error::Parse { .. } => "ParseError",
            Error::MissingColumn(_) => "MissingColumn",
            Error::EmptyFile(_) => "EmptyFile",
            Error::BadFractions(_) => "BadFractions",
            Error::MissingFile(_) => "MissingFile",
            Error::UnknownStrategy { .. } => "UnknownStrategy",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Version { .. } => "UnsupportedVersion",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotSquare { .. }
            | Error::Asymmetric { .. }
            | Error::JitterExhausted { .. }
            | Error::NegativeVariance { .. }
            | Error::NonFinite(_)
            | Error::NonFiniteLoss { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Input,
        }
    }
}

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::DimensionMismatch(what.into())
}
