use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layer fully pruned")]
    FullyPruned,

    #[error("layer {layer} fully pruned")]
    LayerFullyPruned { layer: usize },

    #[error("bad tensor magic {found:?}, expected \"TNSR\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported tensor version {found}, expected 1")]
    BadVersion { found: u8 },

    #[error("unexpected end of tensor payload")]
    UnexpectedEof,

    #[error("trailing bytes after tensor payload")]
    TrailingBytes,

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("enumeration of {paths} paths exceeds the cap of {cap}")]
    EnumerationCap { paths: u128, cap: u128 },

    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { k: usize, n: usize },

    #[error(
        "target retention {target} unreachable with m <= {m_max}: best achievable fraction is {achieved}"
    )]
    TargetUnreachable { target: f64, achieved: f64, m_max: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Invariant,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::InvalidConfig(_) | Error::EnumerationCap { .. } => {
                ErrorClass::Usage
            }
            Error::FullyPruned
            | Error::LayerFullyPruned { .. }
            | Error::NonFinite(_) | Error::TargetUnreachable { .. } => {
                ErrorClass::Invariant
            }
            Error::DimensionMismatch { .. }
            | Error::Empty(_)
            | Error::BadMagic { .. }
            | Error::BadVersion { .. }
            | Error::UnexpectedEof
            | Error::TrailingBytes
            | Error::ShapeMismatch { .. }
            | Error::Malformed(_)
            | Error::TooFewPoints { .. }
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Csv(_) => ErrorClass::Data,
        }
    }
}
