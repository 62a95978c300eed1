use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::id::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("i/o error on {path} at offset {offset}: {source}")]
    IoAt {
        path: PathBuf,
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("chunk {0} not found")]
    NotFound(NodeId),

    #[error("chunk {id} is corrupt: {reason}")]
    Corrupt { id: NodeId, reason: String },

    #[error("chunk payload of {size} bytes exceeds the {limit} byte limit")]
    OversizeChunk { size: usize, limit: usize },

    #[error("entry of {size} bytes exceeds the {limit} byte node limit")]
    OversizeEntry { size: usize, limit: usize },

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("keys must be strictly increasing (duplicate or out-of-order key {0:?})")]
    UnsortedKeys(String),

    #[error("invalid chunker configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },

    #[error("invalid uid {0:?}")]
    InvalidUid(String),

    #[error("invalid branch name {0:?}")]
    InvalidBranchName(String),

    #[error("unknown key {0:?}")]
    UnknownKey(String),

    #[error("unknown branch {branch:?} for key {key:?}")]
    UnknownBranch { key: String, branch: String },

    #[error("unknown reference {0:?}")]
    UnknownRef(String),

    #[error("branch {branch:?} already exists for key {key:?}")]
    BranchExists { key: String, branch: String },

    #[error("head of {key}/{branch} moved concurrently (expected {expected}, found {found})")]
    HeadMoved {
        key: String,
        branch: String,
        expected: String,
        found: String,
    },

    #[error("versions {0} and {1} share no common ancestor")]
    NoCommonAncestor(String, String),

    #[error("value type mismatch: expected {expected}, found {found}")]
    TypeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("verification failed at chunk {chunk}: {reason}")]
    Verification { chunk: NodeId, reason: String },

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("duplicate primary key {key:?} on lines {first} and {second}")]
    DuplicatePrimaryKey { key: String, first: u64, second: u64 },

    #[error("store at {0} was created with a different chunker configuration")]
    ConfigMismatch(PathBuf),

    #[error("store at {0} is locked by another process")]
    Locked(PathBuf),

    #[error("no store found at {0} (run `init` first)")]
    NoStore(PathBuf),

    #[error("store already exists at {0}")]
    StoreExists(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            reason: reason.into(),
        }
    }

    /// True for errors that indicate the store returned bad or missing data.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Error::NotFound(_) | Error::Corrupt { .. } | Error::Malformed { .. } | Error::Verification { .. }
        )
    }
}
