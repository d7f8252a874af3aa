use std::path::PathBuf;

use crate::TokenId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("duplicate token id {0}")]
    DuplicateId(TokenId),
    #[error("token ids are not dense: expected {expected}, found {found}")]
    NonDenseIds { expected: TokenId, found: TokenId },
    #[error("duplicate token string {string:?} (ids {first} and {second})")]
    DuplicateString {
        string: String,
        first: TokenId,
        second: TokenId,
    },
    #[error("invalid index range [{lo}, {hi}) for vocabulary of size {size}")]
    InvalidRange { lo: usize, hi: usize, size: usize },
    #[error("token pool is empty ({skipped} words skipped)")]
    EmptyPool { skipped: usize },
    #[error("pool too small: need {needed} tokens, have {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot encode {0:?} with this vocabulary")]
    Unencodable(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("score protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("vocabulary size mismatch: expected {expected}, backend has {actual}")]
    VocabMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tensor archive: {0}")]
    Archive(String),
    #[error("suite is empty")]
    EmptySuite,
    #[error("result store has no complete cells: {0}")]
    EmptyStore(String),
    #[error("duplicate sweep cell: {0}")]
    DuplicateCell(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("fit did not converge: {0}")]
    Divergence(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("step grids differ: {0}")]
    GridMismatch(String),
    #[error("IoU undefined for two empty sets")]
    EmptyIou,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
