use std::io;

/// Errors produced by the detection toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("least-squares design is rank deficient (Gram condition {gram_condition:e})")]
    IllConditioned { gram_condition: f64 },

    #[error("training set is empty or has no targets")]
    EmptyTrainingSet,

    #[error("unknown detector `{0}`")]
    UnknownDetector(String),

    #[error("unknown ablation `{0}`")]
    UnknownAblation(String),

    #[error("bad dataset file: {0}")]
    Format(String),

    #[error("dataset truncated: header implies {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("fast path disagrees with the reference forward: {0}")]
    EquivalenceFailed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
