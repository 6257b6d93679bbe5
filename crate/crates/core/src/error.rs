use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),

    #[error("tensor {0:?} not found")]
    NotFound(String),

    #[error("tensor {name:?} holds a non-finite value at flat index {index}")]
    NonFiniteData { name: String, index: usize },

    #[error("size mismatch for {name:?}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("tensor {name:?} is not eligible: {reason}")]
    NotEligible { name: String, reason: String },

    #[error("tensor {0:?} has an all-zero spectrum")]
    ZeroTensor(String),

    #[error("no eligible tensors in checkpoint")]
    EmptyEligibleSet,

    #[error("degenerate spectrum: singular value {value} at position {index} is not positive")]
    DegenerateSpectrum { index: usize, value: f64 },

    #[error("singular output covariance: {0}")]
    SingularCovariance(String),

    #[error("projected ascent did not converge (restart {restart}); last objectives {trace:?}")]
    ConvergenceFailure { restart: usize, trace: Vec<f64> },

    #[error("insufficient samples: {got} < {min}")]
    InsufficientSamples { got: usize, min: usize },

    #[error("scale factor must be non-zero")]
    DegenerateScale,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
