use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training of {stage} diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("no database item shares a class with the target label")]
    TargetUnsatisfiable,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("stage {stage} failed: {source}")]
    Stage { stage: String, source: Box<Error> },

    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {}", .0.display())]
    Missing(PathBuf),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: String, expected: String },

    #[error("checkpoint checksum mismatch: file is corrupted")]
    Checksum,

    #[error("checkpoint holds a {found} but a {expected} was requested")]
    Kind { found: String, expected: String },

    #[error("checkpoint shape mismatch for {what}: stored {stored}, expected {expected}")]
    Shape {
        what: String,
        stored: String,
        expected: String,
    },

    #[error("malformed checkpoint: {0}")]
    Format(String),
}
