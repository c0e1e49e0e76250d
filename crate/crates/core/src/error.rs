use thiserror::Error;

/// Errors raised by the contour algebra, the solvers and the analysis stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid contour grid: {0}")]
    InvalidGrid(String),

    #[error("kernels live on different contour grids")]
    GridMismatch,

    #[error("singular contour operator ({context}): condition estimate {condition:.3e}")]
    Singular { context: String, condition: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("self-consistency did not converge after {iterations} iterations (last residual {last:.3e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("incommensurate runs: {0}")]
    Incommensurate(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("fit rejected: {0}")]
    Fit(String),

    #[error("patch policy: {0}")]
    Patch(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
