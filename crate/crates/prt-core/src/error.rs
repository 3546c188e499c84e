use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation precondition (bad argument, mismatched
    /// orders, out-of-range input).
    #[error("input error: {0}")]
    Input(String),

    /// Data produced or consumed by an operation is invalid (non-finite
    /// samples, empty geometry, failed projection).
    #[error("data error: {0}")]
    Data(String),

    /// A file could not be parsed. Carries a 1-based line number when the
    /// format is line-oriented.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A binary or JSON file failed structural validation.
    #[error("format error: {0}")]
    Format(String),

    /// Numeric failure inside the network (non-finite intermediate).
    #[error("numeric error in layer {layer}: {msg}")]
    Numeric { layer: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub fn numeric(layer: usize, msg: impl Into<String>) -> Self {
        Error::Numeric {
            layer,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
