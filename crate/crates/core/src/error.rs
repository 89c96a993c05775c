use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    Data(String),

    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("loss diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable category, used for `ERROR <category>:` lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Data(_) => "data",
            Error::Config { .. } => "config",
            Error::Format { .. } => "format",
            Error::Usage(_) => "usage",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
        }
    }
}
