use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Invalid(String),

    #[error("grid too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("fourier floor violated: |beta_hat| = {value:.3e} < {floor:.3e} at |xi| = {at:.4}")]
    FourierFloorViolation { value: f64, floor: f64, at: f64 },

    #[error("support margin {margin:.4} is below the kernel radius {required:.4}")]
    MarginViolation { margin: f64, required: f64 },

    #[error("Haar level {k} needs a finer grid than J = {j}")]
    LevelTooFine { k: u32, j: u32 },

    #[error("mask entry {value} outside [-1, 1]")]
    MaskOutOfRange { value: f64 },

    #[error("fit needs at least 3 positive samples, got {0}")]
    FitTooShort(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
