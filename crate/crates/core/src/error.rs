use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("attention over an empty key set")]
    EmptyScope,

    #[error("optimizer step without gradients for parameter `{0}`")]
    MissingGradients(String),

    #[error("instance generation failed: {0}")]
    InstanceGeneration(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("goal cell ({0}, {1}) is an obstacle")]
    GoalOnObstacle(usize, usize),

    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },

    #[error("step called on a finished episode")]
    EpisodeOver,

    #[error("no agent to mask at FOV cell ({0}, {1})")]
    MaskEmptyCell(usize, usize),

    #[error("agent {agent} requested agent {target}, which is not in its field of view")]
    NotNeighbor { agent: usize, target: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("suite hash mismatch: {0} vs {1}")]
    SuiteHashMismatch(String, String),

    #[error("non-finite loss at learner step {step}; batch dumped to {}", dump.display())]
    NonFiniteLoss { step: u64, dump: PathBuf },

    #[error("replay buffer holds {have} segments, need {need}")]
    NotReady { have: usize, need: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
