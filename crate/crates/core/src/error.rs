use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of range: {index} (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// The control vanishes on an interval where the path moves.
    #[error("infinite norm: control vanishes on [t_{i}, t_{j}] with a nonzero increment")]
    InfiniteNorm { i: usize, j: usize },

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Young condition violated: 1/{p} + 1/{q} <= 1")]
    YoungCondition { p: f64, q: f64 },

    #[error("regularity regime violated: {0}")]
    Regime(String),

    #[error("vector field provides derivatives up to order {available}, order {requested} requested")]
    InsufficientDerivatives { requested: usize, available: usize },

    #[error("solver diverged on window starting at t = {t0}: {reason}")]
    Divergence { t0: f64, reason: String },

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
