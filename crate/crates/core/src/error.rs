use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data or file content.
    Data,
    /// Invalid argument or configuration supplied by the caller.
    Usage,
    /// Numerical or runtime failure.
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame {frame} has {got} coordinates, expected 48")]
    FrameArity { line: usize, frame: usize, got: usize },
    #[error("line {line}: label out of domain ({label}); expected 0 or 1")]
    LabelOutOfDomain { line: usize, label: i64 },
    #[error("line {line}: unknown gesture key `{key}`")]
    UnknownGesture { line: usize, key: String },
    #[error("line {line}: non-finite coordinate in frame {frame}")]
    NonFinite { line: usize, frame: usize },
    #[error("duplicate sequence id `{0}`")]
    DuplicateId(String),
    #[error("invalid sequence `{id}`: {reason}")]
    InvalidSequence { id: String, reason: String },
    #[error("gesture `{gesture}` value {value} out of domain")]
    GestureDomain { gesture: &'static str, value: i64 },
    #[error("normalization impossible for `{0}`: all joints coincide in every frame")]
    Degenerate(String),
    #[error("derivative of order {order} needs at least {needed} frames, got {got}")]
    TooFewFrames { order: usize, needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cannot split dataset: {0}")]
    Split(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("norm stats have not been fitted")]
    UnfittedNormStats,
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::FrameArity { .. }
            | Error::LabelOutOfDomain { .. }
            | Error::UnknownGesture { .. }
            | Error::NonFinite { .. }
            | Error::DuplicateId(_)
            | Error::InvalidSequence { .. }
            | Error::GestureDomain { .. }
            | Error::Degenerate(_)
            | Error::Checkpoint(_)
            | Error::ConfigMismatch(_)
            | Error::Split(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::TooFewFrames { .. }
            | Error::Shape(_)
            | Error::UnfittedNormStats
            | Error::Divergence { .. } => ErrorKind::Runtime,
        }
    }
}
