//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric precondition was violated (non-positive length, empty mask, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two grids that must be congruent differ in size or pitch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index, window or coordinate fell outside the represented region.
    #[error("range error: {0}")]
    Range(String),

    /// An operation was applied to a value in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// A scenario configuration is internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Range(_) => "range",
            Error::State(_) => "state",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)*) => {
        if $cond {
        } else {
            return Err($crate::error::Error::$variant(format!($($arg)*)));
        }
    };
}
pub(crate) use ensure;
