use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ConfMdpError>;

#[derive(Debug, Error)]
pub enum ConfMdpError {
    /// Tables whose shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Malformed inputs: non-stochastic rows, empty supports, bad grids.
    #[error("structural error: {0}")]
    Structural(String),

    /// A linear system could not be solved.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A diagnostic was called outside its precondition.
    #[error("diagnostic precondition violated: {0}")]
    Diagnostic(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver error at iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<ConfMdpError>,
    },
}

impl ConfMdpError {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfMdpError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ConfMdpError::Io {
            path: path.into(),
            source,
        }
    }
}
