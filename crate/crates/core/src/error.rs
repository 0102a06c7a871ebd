use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: &'static str,
        line: usize,
        msg: String,
    },

    #[error("unsupported camera model `{0}`")]
    UnsupportedModel(String),

    #[error("cannot read image {path}: {msg}")]
    Stream { path: PathBuf, msg: String },

    #[error("degenerate triangle (area {0:e})")]
    DegenerateTriangle(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("cannot initialize a field from an empty point cloud")]
    EmptyCloud,

    #[error("invalid view box: {0}")]
    InvalidViewBox(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(file: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file,
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
