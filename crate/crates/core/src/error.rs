use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// A configuration value failed validation. `field` names the offending entry.
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("value {value} out of range [{lo}, {hi}] for {what}")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("vehicle {0} is not on an approach link")]
    NotOnApproach(u32),

    #[error("no conflict point between path {0} and path {1}")]
    NoConflict(usize, usize),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: usize },

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
