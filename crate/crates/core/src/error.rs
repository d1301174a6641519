use thiserror::Error;

/// Errors raised anywhere in the detection and decoding pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),
    #[error("spatial correlation coefficient must lie in [0, 1), got {0}")]
    InvalidCorrelation(f64),
    #[error("invalid pilots: {0}")]
    InvalidPilots(String),
    #[error("invalid length: expected {expected}, got {actual}")]
    InvalidLength { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("exhaustive search over {0} hypotheses exceeds the supported cap")]
    SizeTooLarge(u128),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("archive version {found} is not supported (expected {expected})")]
    ArchiveVersion { found: u32, expected: u32 },
    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("archive checksum mismatch")]
    Checksum,
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
