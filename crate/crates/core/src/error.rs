use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("video {id}: dimension mismatch: {message}")]
    DimensionMismatch { id: String, message: String },
    #[error("video {id}: non-finite feature value at frame {frame}, column {column}")]
    NonFinite {
        id: String,
        frame: usize,
        column: usize,
    },
    #[error("duplicate video id {0:?}")]
    DuplicateId(String),
    #[error("video {id}: invalid annotations: {message}")]
    Annotation { id: String, message: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stale trace: forward pass was computed with different parameters or inputs")]
    StaleTrace,
    #[error("kernel matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("checkpoint version mismatch: {0}")]
    CheckpointVersion(String),
    #[error("corrupt checkpoint payload: {0}")]
    CorruptCheckpoint(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures raised by the numerics (overflow, non-PSD kernels,
    /// NaN losses) rather than by malformed inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::Numerical(_)
        )
    }
}
