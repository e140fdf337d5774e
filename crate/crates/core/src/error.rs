use thiserror::Error;

/// Failure modes shared by every operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("picard iteration did not contract within {sweeps} sweeps; minimum window {window} reached (last residual {residual:e})")]
    NoContraction {
        sweeps: usize,
        window: f64,
        residual: f64,
    },

    #[error("window {window} fell below the minimum {minimum}")]
    WindowUnderflow { window: f64, minimum: f64 },

    #[error("configuration error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("report mismatch: {0}")]
    ReportMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier for the failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NoContraction { .. } => "no_contraction",
            Error::WindowUnderflow { .. } => "window_underflow",
            Error::Config { .. } => "invalid_config",
            Error::ReportMismatch(_) => "report_mismatch",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
