use std::path::PathBuf;

/// Errors raised anywhere in the controller, plant or harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("friction map: {0}")]
    Map(String),

    #[error("command history covers back to {oldest:.6} s but {required:.6} s is needed")]
    InsufficientHistory { oldest: f64, required: f64 },

    #[error("QP solver: {0}")]
    Qp(String),

    #[error("stage {stage}: {reason}")]
    Infeasible { stage: usize, reason: String },

    #[error("simulation diverged at t = {time:.4} s: {reason}")]
    Diverged { time: f64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
