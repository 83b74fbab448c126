use thiserror::Error;

pub type Result<T> = std::result::Result<T, CdeError>;

#[derive(Debug, Error)]
pub enum CdeError {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid graph state: {0}")]
    State(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter `{name}` (step {step})")]
    NonFiniteGradient { name: String, step: u64 },

    #[error("non-finite training loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("non-finite log-density {value} at index {index}")]
    NonFiniteDensity { index: usize, value: f64 },

    #[error("marginal density vanishes at the query point (log marginal {log_marginal})")]
    VanishingMarginal { log_marginal: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CdeError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CdeError::InvalidArgument(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CdeError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Numerical failures (as opposed to usage or I/O problems).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CdeError::NonFiniteGradient { .. }
                | CdeError::NonFiniteLoss { .. }
                | CdeError::NonFiniteDensity { .. }
                | CdeError::VanishingMarginal { .. }
        )
    }
}
