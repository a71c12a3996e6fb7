use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("singular schedule: alpha or sigma vanishes at t = {t}")]
    SingularSchedule { t: usize },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    TrainingDivergence { iteration: usize, loss: f64 },

    #[error("optimization diverged at k = {k}, t = {t}, pose = {pose:.4} rad")]
    Divergence { k: usize, t: usize, pose: f64 },

    #[error("non-finite gradient passed to the optimizer")]
    NonFiniteGradient,

    #[error("no iso-contour crossing at level {iso}")]
    EmptyContour { iso: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed image: {0}")]
    Image(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, got })
    }
}
