use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HcgrError>;

#[derive(Debug, Error)]
pub enum HcgrError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A forward value or loss became NaN/Inf.
    #[error("numeric failure in {context}")]
    Numeric { context: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HcgrError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        HcgrError::InvalidArgument(msg.into())
    }

    pub fn numeric(context: impl Into<String>) -> Self {
        HcgrError::Numeric {
            context: context.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HcgrError::Io {
            path: path.into(),
            source,
        }
    }
}
