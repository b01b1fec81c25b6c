use thiserror::Error;

/// Errors produced by the loss max-pooling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("loss vector is empty")]
    EmptyLosses,

    #[error("loss at index {index} is {value}; losses must be finite and non-negative")]
    InvalidLoss { index: usize, value: f64 },

    #[error("p must satisfy p >= 1, got {0}")]
    InvalidP(f64),

    #[error("m = {m} is outside [1, n] with n = {n}")]
    InvalidM { m: f64, n: usize },

    #[error("m fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),

    #[error("pixel count n must be positive")]
    EmptyPixelSet,

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dual variable at index {index} is negative ({value})")]
    NegativeDual { index: usize, value: f64 },

    #[error("label {label} at pixel {pixel} is outside [0, {classes})")]
    LabelOutOfRange {
        pixel: usize,
        label: usize,
        classes: usize,
    },

    #[error("batch has no valid pixels")]
    NoValidPixels,

    #[error("invalid {arg}: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
