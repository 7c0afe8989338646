use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("leaf has no children (level {level} at depth {depth})")]
    LeafHasNoChildren { level: u32, depth: u32 },

    #[error("interval (level {level}, index {index}) is not in a tree of depth {depth}")]
    IntervalOutOfRange { level: u32, index: u64, depth: u32 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("singular weight: smallest eigenvalue {min_eigenvalue:e} below {threshold:e}")]
    SingularWeight { min_eigenvalue: f64, threshold: f64 },

    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("depth mismatch: expected {expected}, got {got}")]
    DepthMismatch { expected: u32, got: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sign pattern covers {got} intervals, expected {expected}")]
    IncompleteSignPattern { expected: usize, got: usize },

    #[error("{intervals} Haar intervals exceed the enumeration cap of {cap}; use sw_monte_carlo instead")]
    EnumerationCapExceeded { intervals: usize, cap: usize },

    #[error("stopping construction exceeded {0} generations")]
    GenerationLimit(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
