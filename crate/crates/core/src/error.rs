use std::io;

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum SimError {
    /// Invalid or inconsistent configuration. `path` names the offending key.
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Two positions coincide where a direction is required.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// An operation that needs at least one sample or element received none.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A state machine reached a state that should be unreachable.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SimError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
