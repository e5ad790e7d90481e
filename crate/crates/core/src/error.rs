use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A NaN or infinity appeared; `at` names the node, timestep or stage.
    #[error("non-finite value produced at {at}")]
    NonFinite { at: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Config { path: PathBuf, line: usize, reason: String },

    /// An input artifact is absent; `producer` is the subcommand that writes it.
    #[error("missing {path}; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("{path} was produced by config {found}, current config is {expected} (pass --allow-lineage-mismatch to override)")]
    Lineage {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Prefixes the location of a non-finite error with `stage`; other
    /// errors pass through unchanged.
    pub fn in_stage(self, stage: &str) -> Error {
        match self {
            Error::NonFinite { at } => Error::NonFinite {
                at: format!("{stage}: {at}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
