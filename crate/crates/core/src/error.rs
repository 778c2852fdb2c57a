use std::path::PathBuf;

/// Errors produced anywhere in the planner stack.
#[derive(Debug, thiserror::Error)]
pub enum LhpfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("insufficient horizon: need at least {needed} points, got {got}")]
    InsufficientHorizon { needed: usize, got: usize },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("frozen parameter changed: {0}")]
    FrozenParameterChanged(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("planner failure: {0}")]
    PlannerFailure(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, LhpfError>;

impl LhpfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LhpfError::Io { path: path.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        LhpfError::Parse { context: context.into(), message: message.into() }
    }
}
