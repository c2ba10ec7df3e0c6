use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Retrieval,
    Backend,
    Evaluation,
    Input,
    Domain,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("no usable results for query {query:?}")]
    EmptyResult { query: String },

    #[error("unparsable response: {message}")]
    Format { message: String, raw: String },

    #[error("integrity check failed for {path}: expected sha256 {expected}, found {actual}")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        Error::Backend(msg.into())
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            // keep the innermost stage name
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_) => ErrorKind::Domain,
            Error::Input(_) | Error::Image(_) => ErrorKind::Input,
            Error::Backend(_) => ErrorKind::Backend,
            Error::Retrieval(_) | Error::EmptyResult { .. } | Error::Format { .. } | Error::Integrity { .. } => {
                ErrorKind::Retrieval
            }
            Error::Parse { .. } | Error::Validation(_) => ErrorKind::Evaluation,
            Error::Config(_) => ErrorKind::Config,
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. } | Error::Json(_) => ErrorKind::Io,
        }
    }

    /// Build a parse error carrying the location serde_json reports.
    pub fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
