use thiserror::Error;

/// Errors shared across the crate.
///
/// `ShapeMismatch`, `Unsupported` and the parse variants are validation
/// failures on caller input; `InternalInvariant` signals a broken invariant
/// inside the emulator itself and should never surface in normal use.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("matrix is not 2:4 sparse: first violation at row {row}, group {group}")]
    NotSparse24 { row: usize, group: usize },

    #[error("malformed sparsity metadata: {0}")]
    Metadata(String),

    #[error("bad shared-memory address: {0}")]
    Address(String),

    #[error("undefined-relative-error: reference norm is zero")]
    UndefinedRelativeError,

    #[error("overflow-detected: non-finite value in result")]
    OverflowDetected,

    #[error("uncalibrated: {0}")]
    Uncalibrated(String),

    #[error("out-of-calibration: {0}")]
    OutOfCalibration(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal invariant violated: {0}")]
    InternalInvariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
