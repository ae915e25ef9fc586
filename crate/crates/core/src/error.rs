use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SeqTooLong { len: usize, max: usize },

    #[error("sequence of length {len} is too short (need at least {min})")]
    SeqTooShort { len: usize, min: usize },

    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("item `{0}` has an empty answer")]
    EmptyAnswer(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary of size {vocab} too small for corpus layout, need at least {required}")]
    VocabTooSmall { vocab: usize, required: usize },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("{path}:{line}: {msg}")]
    CorpusLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("missing artifact {path}; run `{command}` first")]
    MissingArtifact { path: PathBuf, command: String },

    #[error("run diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("training diverged (non-finite loss at epoch {epoch}); try a smaller eta")]
    TrainDiverged { epoch: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Diverged { .. }
                | Error::TrainDiverged { .. }
                | Error::Io { .. }
                | Error::NonFinite(_)
        )
    }
}
