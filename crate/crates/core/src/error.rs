use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("byte length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite voxel value at flat index {index}")]
    NonFinite { index: usize },

    #[error("value {value} at flat index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: String, actual: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(
        "Hermitian symmetry violated: max |Im| = {max_imag:e} exceeds 1e-6 * max |Re| = {max_real:e}"
    )]
    SymmetryViolation { max_imag: f64, max_real: f64 },

    #[error("covariance is singular; increase shrinkage lambda or add training samples")]
    SingularCovariance,

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("missing result rows: {0}")]
    MissingRows(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short stable identifier, used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::OutOfRange { .. } => "out_of_range",
            Error::DimMismatch { .. } => "dim_mismatch",
            Error::InvalidParam(_) => "invalid_param",
            Error::SymmetryViolation { .. } => "symmetry_violation",
            Error::SingularCovariance => "singular_covariance",
            Error::Manifest(_) => "manifest",
            Error::MissingRows(_) => "missing_rows",
            Error::Context { source, .. } => source.code(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
