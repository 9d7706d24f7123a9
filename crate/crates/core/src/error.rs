use std::path::PathBuf;

use thiserror::Error;

/// Faults raised by the physics layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("numerical divergence at t = {time:.4} s")]
    Divergence { time: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("episode already finished; call reset")]
    EpisodeFinished,
}

/// Faults raised by the learner.
#[derive(Debug, Error)]
pub enum LearnError {
    #[error("no data: both replay buffers are empty")]
    NoData,
    #[error("training divergence: non-finite {what} loss")]
    Divergence { what: &'static str },
    #[error("invalid learner configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// File-format and I/O failures.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn fs(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Fs { path: path.into(), source }
    }
}

/// Evaluation-layer failures.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence length mismatch: reference {reference}, measured {measured}")]
    LengthMismatch { reference: usize, measured: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("truncated episode log: {0}")]
    Truncated(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}
