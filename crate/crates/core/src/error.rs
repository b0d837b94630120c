use std::path::PathBuf;

use crate::ids::{ItemId, UserId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("self-edge rejected for user {0}")]
    SelfEdge(UserId),
    #[error("user {0} outside population of {1}")]
    UserOutOfRange(UserId, usize),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector for user {0}")]
    ZeroVector(UserId),
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("signal {0} is not a positive engagement")]
    NonPositiveSignal(crate::engagement::Signal),
    #[error("engagement at {at} precedes item creation at {created}")]
    TimeOrder { at: i64, created: i64 },
    #[error("support {support} exceeds neighbour count {k}")]
    SupportExceedsK { support: usize, k: usize },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("snapshot version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
