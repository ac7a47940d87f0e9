use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation (non-finite values,
    /// angles out of range, empty point sets).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate quaternion (norm {0:.3e})")]
    DegenerateQuaternion(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Unknown part/joint ids or other structural mismatches between a
    /// template and the data referring to it.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("joint `{joint}` state {state} outside limits [{min}, {max}]")]
    JointLimit {
        joint: String,
        state: f64,
        min: f64,
        max: f64,
    },

    #[error("operation requires a {expected} template")]
    Kind { expected: &'static str },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label mismatch: {0}")]
    Label(String),

    /// A JSON document failed validation; `path` is a JSON pointer.
    #[error("invalid document at {path}: {message}")]
    Document { path: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("operation log replays to a pose {0:.3e} away from the recorded one")]
    ReplayMismatch(f64),

    #[error("lock held on {0}")]
    LockHeld(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn doc(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Document {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
