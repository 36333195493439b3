use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("scale must be strictly positive, got {0}")]
    NonPositiveScale(f64),

    #[error("temperature must be strictly positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("probability of the true class underflowed ({0:e})")]
    DegenerateProb(f64),

    #[error("empty batch")]
    EmptyBatch,

    #[error("classwise metric needs full probability vectors")]
    MissingProbs,

    #[error("AUROC needs at least one correct and one incorrect sample")]
    DegenerateLabels,

    #[error("correlation undefined: zero variance")]
    ZeroVariance,

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("truncated IDX file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dataset too small: {0}")]
    TooSmall(String),

    #[error("normalization std must be positive, got {0}")]
    ZeroStd(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("checkpoint blob holds {found} values, manifest declares {expected}")]
    BlobSizeMismatch { expected: usize, found: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ManifestMismatch(_) | Error::BlobSizeMismatch { .. } => 2,
            Error::BadMagic { .. }
            | Error::CountMismatch { .. }
            | Error::TruncatedFile { .. }
            | Error::TooSmall(_)
            | Error::ZeroStd(_)
            | Error::Io { .. } => 3,
            Error::NonFiniteLoss { .. } | Error::DegenerateProb(_) => 4,
            _ => 1,
        }
    }
}
