use std::path::PathBuf;

/// Errors raised by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, found {found}{}", at_line(*.line))]
    Dimension {
        expected: usize,
        found: usize,
        line: Option<usize>,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("ranked lists do not cover the same ids: {0}")]
    IdSetMismatch(String),

    #[error("class `{class}`: {source}")]
    Class {
        class: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_class(self, class: &str) -> Self {
        Error::Class {
            class: class.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
