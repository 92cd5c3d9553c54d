use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside its admissible range.
    #[error("{what} out of range: {detail}")]
    Range { what: &'static str, detail: String },

    /// Two structures that must agree (lattices, shapes, layer widths) do not.
    #[error("structural mismatch in `{field}`: {detail}")]
    Structure { field: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A computation would exceed a memory or work budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Training produced non-finite values.
    #[error("training diverged: {0}")]
    Training(String),

    #[error("malformed {kind} data: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn range(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Range {
            what,
            detail: detail.into(),
        }
    }

    pub fn structure(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Structure {
            field,
            detail: detail.into(),
        }
    }

    pub fn format(kind: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
