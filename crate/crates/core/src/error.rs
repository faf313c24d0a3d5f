use std::path::Path;

use thiserror::Error;

/// Errors raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The dataset cannot support the requested operation (single class,
    /// infeasible stratification, empty bag, ...).
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("malformed file {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("missing artifact {path}: {what}")]
    MissingArtifact { path: String, what: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }

    /// True when the error stems from bad input rather than a bug or
    /// environment failure.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_)
            | Error::Dataset(_)
            | Error::Format { .. }
            | Error::MissingArtifact { .. }
            | Error::Shape { .. }
            | Error::Csv(_)
            | Error::Json(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::NonFinite(_) => false,
        }
    }
}
