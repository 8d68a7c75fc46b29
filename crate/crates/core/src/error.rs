use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: every row needs at least one unmasked entry (row {row} is fully masked)")]
    DegenerateRow { op: &'static str, row: usize },

    #[error("expected a scalar, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    Vocab { id: usize, vocab_size: usize },

    #[error("invalid label {0:?}")]
    Label(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("{0}")]
    Data(String),

    #[error("sentence has {words} words; exact Shapley enumeration supports at most {max}, use sampled mode")]
    TooManyWords { words: usize, max: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
