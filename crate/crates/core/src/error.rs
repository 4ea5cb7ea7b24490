use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths that do not compose.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed caller input (empty stacks, wrong lengths, bad spans).
    #[error("invalid input: {0}")]
    Input(String),

    /// A parameter or configuration value outside its domain.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Signal or image quality too poor to continue (no periodicity, too few beats).
    #[error("quality check failed: {0}")]
    Quality(String),

    /// Not enough data to build the requested training/evaluation set.
    #[error("insufficient data: {0}")]
    Data(String),

    /// A value that must be finite or bounded away from zero is not.
    #[error("numeric guard: {0}")]
    Numeric(String),

    /// Metric undefined for the supplied scores (e.g. a single class).
    #[error("metric undefined: {0}")]
    Metric(String),

    /// Violated API contract (e.g. backward from a non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file that does not follow its declared format.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
