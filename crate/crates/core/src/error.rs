use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate individual {name:?} on lines {first} and {second}")]
    DuplicateName {
        name: String,
        first: usize,
        second: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out-of-vocabulary token {0:?}")]
    OutOfVocabulary(String),

    #[error("question not known to this model: {0:?}")]
    UnknownQuestion(String),

    #[error("answer not in this model's answer set: {0:?}")]
    UnknownAnswer(String),

    #[error("backend does not support {0}")]
    Unsupported(&'static str),

    #[error("models do not share a vocabulary")]
    VocabularyMismatch,

    #[error("loss requires at least one example ({0})")]
    EmptyBatch(&'static str),

    #[error("batch is missing {field} for example {index}")]
    MissingField { field: &'static str, index: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("score undefined: original-model accuracy on the {0} set is zero")]
    UndefinedScore(&'static str),

    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, step {step}: total loss {total}")]
    Diverged { epoch: usize, step: usize, total: f64 },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
