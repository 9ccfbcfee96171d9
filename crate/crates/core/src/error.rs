use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {index} is out of range for {n_types} content types")]
    InvalidAction { index: usize, n_types: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("session {0} has already ended")]
    DeadSession(u64),

    #[error("slate contains item {0} more than once")]
    DuplicateItem(usize),

    #[error("item {0} is not part of the slate")]
    ItemNotInSlate(usize),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("state space of {states} states exceeds the enumeration limit of {limit}")]
    EnumerationLimit { states: usize, limit: usize },

    #[error("unknown feature index {index} (model has {n_features} features)")]
    UnknownFeature { index: usize, n_features: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("log parse error at line {line}: {message}")]
    LogParse { line: usize, message: String },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    ConfigSerialize(#[from] toml::ser::Error),
}
