use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or configuration argument is outside its valid domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A named item (channel label, layer, symbol) does not exist.
    #[error("unknown {kind} '{name}'")]
    Lookup { kind: &'static str, name: String },

    #[error("invalid state: {0}")]
    State(String),

    /// Fewer usable kernel eigenvalues than requested components.
    #[error("requested {requested} components but the centered kernel has usable rank {usable}")]
    Rank { requested: usize, usable: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
