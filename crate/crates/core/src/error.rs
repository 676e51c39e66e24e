use thiserror::Error;

use crate::Key;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("key {0} is already present")]
    DuplicateKey(Key),
    #[error("cannot build a node from an empty key set")]
    EmptyInput,
    #[error("input keys must be strictly increasing (violated at position {position})")]
    UnsortedInput { position: usize },
    #[error("bulk load requires an empty index")]
    NotEmpty,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("`{field}` out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
}
