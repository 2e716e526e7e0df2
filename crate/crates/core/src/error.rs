use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrcsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not produce a split with both classes in every training portion after {attempts} attempts")]
    DegenerateSplit { attempts: usize },

    #[error("solver did not converge after {passes} passes (best duality gap {best_gap:e})")]
    NotConverged { passes: usize, best_gap: f64 },

    #[error("no active instances: coreset vector is all zeros")]
    EmptyActiveSet,

    #[error("effective weight sum must be positive, got {0:e}")]
    NonPositiveWeightSum(f64),

    #[error("symmetric eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("secular equation root not bracketed: {0}")]
    Bracketing(String),

    #[error("unknown selection method `{0}`")]
    UnknownMethod(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DrcsError>;
