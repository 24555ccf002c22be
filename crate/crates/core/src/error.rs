use std::path::PathBuf;

/// Errors produced by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("time {0} outside the admissible range [0, 1)")]
    TimeOutOfRange(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("monte carlo estimate unsupported near query: effective sample size {effective:.2} below floor {floor}")]
    InsufficientSamples { effective: f64, floor: f64 },

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error("no voxel lies in front of the camera")]
    AllBehindCamera,

    #[error("gronwall hypothesis violated at grid index {index}: u = {lhs}, bound = {rhs}")]
    GronwallHypothesis { index: usize, lhs: f64, rhs: f64 },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
