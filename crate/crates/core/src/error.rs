use std::path::PathBuf;

/// Errors produced anywhere in the recognizer pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("vocabulary error: token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: u32, size: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("could not decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unrenderable characters {chars:?} (not covered by any font)")]
    Unrenderable { chars: Vec<char> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) | Error::Checkpoint(_) => 1,
            Error::Numeric(_) | Error::DegenerateVector(_) | Error::Degenerate(_) => 3,
            Error::Tensor(_) | Error::Shape { .. } => 3,
            _ => 2,
        }
    }
}
