use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CamilError>;

#[derive(Debug, Error)]
pub enum CamilError {
    #[error("shape mismatch in {context}: {left} vs {right}")]
    ShapeMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CamilError {
    pub fn shape(context: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        CamilError::ShapeMismatch {
            context,
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CamilError::Io {
            path: path.into(),
            source,
        }
    }
}
