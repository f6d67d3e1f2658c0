use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or scene value violates its documented constraints.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene component {index} ({kind}): {reason}")]
    Component {
        index: usize,
        kind: &'static str,
        reason: String,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("frame size mismatch: expected {expected} samples, got {got}")]
    FrameSize { expected: usize, got: usize },

    #[error("input not time ordered at record {index}")]
    Ordering { index: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by the program or
    /// the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
