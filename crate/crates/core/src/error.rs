use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GraspError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("unknown sample id {0}")]
    UnknownSample(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<GraspError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GraspError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GraspError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GraspError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        GraspError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
