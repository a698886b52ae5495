use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |H - H^dagger| = {violation:.3e}")]
    NotHermitian { violation: f64 },

    #[error("matrix is not unitary: max |U^dagger U - I| = {violation:.3e}")]
    NotUnitary { violation: f64 },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty symmetry sector {label} (spin dimension {dim})")]
    EmptySector { label: String, dim: usize },

    #[error("operator leaks out of the sector: max leakage {leakage:.3e}")]
    SectorLeak { leakage: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("fit failed ({model}): {reason}")]
    Fit { model: &'static str, reason: String },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("trial {trial} failed during {stage}: {source}")]
    Trial {
        trial: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
