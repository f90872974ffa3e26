use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind or on the camera plane (z = {0})")]
    NonPositiveDepth(f64),
    #[error("degenerate 6D rotation: first column is zero or columns are parallel")]
    DegenerateRotation6D,
    #[error("need at least 8 correspondences, got {0}")]
    InsufficientMatches(usize),
    #[error("every minimal sample was rank deficient")]
    DegenerateConfiguration,
    #[error("Sampson denominator vanishes")]
    ZeroDenominator,
    #[error("backward pass does not match the forward pass: {0}")]
    MismatchedForward(String),
    #[error("no static pixels available to initialize static Gaussians")]
    EmptyStaticRegion,
    #[error("need at least {need} dynamic tracks, got {got}")]
    InsufficientTracks { got: usize, need: usize },
    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(&'static str),
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("shape mismatch in {path}: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("total loss was non-finite for {0} consecutive iterations")]
    NonFiniteLoss(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// Validation errors map to exit code 2, everything else to 1.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss(_) | Error::MismatchedForward(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
