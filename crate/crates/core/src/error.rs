use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} index {index} outside {lo}..={hi}")]
    Index {
        what: &'static str,
        index: usize,
        lo: usize,
        hi: usize,
    },
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("state diverged at t = {time} (H1 norm {norm:e})")]
    Divergence { time: f64, norm: f64 },
    #[error("alpha calibration failed: {0}")]
    Calibration(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("rejection sampler exceeded {0} iterations")]
    Degeneracy(usize),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("probe precondition violated: {0}")]
    ProbeInvalid(String),
    #[error("unsupported mode: {0}")]
    Mode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
