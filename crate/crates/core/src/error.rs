use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The variants are grouped so that callers (the CLI in particular) can map
/// them onto validation, numerical and I/O failure classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("number of spins {0} is outside the supported range 1..={max}", max = crate::spin::MAX_SPINS)]
    DimensionLimit(usize),

    #[error("invalid spin pair ({0}, {1}) for a {2}-spin system")]
    InvalidPair(usize, usize, usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max |A - A^dagger| = {0:.3e})")]
    NotHermitian(f64),

    #[error("operator is not traceless (|Tr| = {0:.3e})")]
    NotTraceless(f64),

    #[error("fidelity is undefined for a zero-norm operator")]
    ZeroNorm,

    #[error("negative duration {0} s")]
    NegativeDuration(f64),

    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("exponential fit failed: {0}")]
    FitFailure(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionLimit(_)
                | Error::InvalidPair(..)
                | Error::DimensionMismatch { .. }
                | Error::NotHermitian(_)
                | Error::NotTraceless(_)
                | Error::NegativeDuration(_)
                | Error::LengthMismatch { .. }
                | Error::Validation { .. }
                | Error::ConfigParse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
