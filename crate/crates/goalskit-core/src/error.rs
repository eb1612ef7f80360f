//! Library-wide error type.
//!
//! Every failure is classified as either a *data* error (bad inputs, malformed
//! files, out-of-range parameters) or a *numerical* error (factorization
//! breakdown, degenerate geometry discovered mid-computation). The CLI maps
//! the two classes to distinct process exit codes, so the split is part of the
//! public contract rather than an implementation detail.

use std::path::PathBuf;
use thiserror::Error;

/// Coarse failure class used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    /// Problems with inputs: files, parsing, shapes, parameter ranges.
    Data,
    /// Numerical breakdown on well-formed inputs.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV in {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error("non-numeric cell at data row {row}, column '{column}': '{token}'")]
    NonNumericCell {
        row: usize,
        column: String,
        token: String,
    },

    #[error("response column '{name}' not found in header")]
    MissingResponseColumn { name: String },

    #[error("need at least {need} data rows, found {found}")]
    TooFewRows { need: usize, found: usize },

    #[error("non-finite value encountered in {what}")]
    NonFinite { what: String },

    #[error("column '{name}' is constant; cannot standardize")]
    ConstantColumn { name: String },

    #[error("dataset is already standardized; double standardization is forbidden")]
    AlreadyStandardized,

    #[error("{operation} requires a standardized dataset")]
    NotStandardized { operation: String },

    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: String, detail: String },

    #[error("feature index {index} out of range for {limit} features")]
    FeatureIndexOutOfRange { index: usize, limit: usize },

    #[error("all rows are identical: median pairwise distance is zero")]
    ZeroMedianDistance,

    #[error("Cholesky factorization of {what} failed even with jitter up to {max_jitter:.3e}")]
    CholeskyFailure { what: String, max_jitter: f64 },

    #[error("{what} mismatch: {detail}")]
    Mismatch { what: String, detail: String },

    #[error("unsupported report format in {path}: {detail}")]
    ReportFormat { path: PathBuf, detail: String },
}

impl Error {
    /// Classify the failure for exit-code mapping.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ZeroMedianDistance | Error::CholeskyFailure { .. } => ErrorClass::Numerical,
            Error::NonFinite { what } if what.contains("result") => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn invalid(name: &str, detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
