use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A simulated or integrated state left the finite range.
    #[error("non-finite state at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("unsupported (q, p) increment pairing: q = {q}, p = {p}")]
    UnsupportedPairing { q: String, p: String },

    #[error("sample too small: need at least {required}, got {actual}")]
    UndersizedSample { required: usize, actual: usize },

    #[error("refusing to allocate {requested} values (cap is {cap})")]
    MemoryCap { requested: usize, cap: usize },

    #[error("dimension {dim} exceeds the supported maximum of {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
