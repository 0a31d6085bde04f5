use thiserror::Error;

/// Errors raised by the simulator and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operator is not Hermitian")]
    NotHermitian,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid density matrix: {0}")]
    InvalidState(String),
    #[error("gate synthesis failed: {0}")]
    SynthesisFailure(String),
    #[error("spectator spin {spectator} is resonant at tau = {tau_us} us")]
    CrosstalkCollision { spectator: usize, tau_us: f64 },
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing config keys: {0:?}")]
    MissingKeys(Vec<String>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
