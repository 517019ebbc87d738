use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A documented precondition was violated by the caller, usually a sign of
    /// an upstream bug (for instance a negative weight in a CAU).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("division by zero at element {index}")]
    DivisionByZero { index: usize },

    #[error("singular homography (|det| = {det:e})")]
    SingularHomography { det: f64 },

    #[error("transformed point at infinity (w = {w:e})")]
    PointAtInfinity { w: f64 },

    #[error("malformed {kind} in {path}: {detail}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss {loss} at update {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
