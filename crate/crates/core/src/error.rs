use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("measurement failed: {0}")]
    Measurement(String),

    /// Static power exceeded the observed draw over the run window.
    #[error("anomalous measurement: dynamic energy {dynamic_energy_j} J is negative")]
    AnomalousMeasurement { dynamic_energy_j: f64 },

    /// An observation failed part-way through a repetition loop.
    #[error("observation {} failed after {elapsed_s} s: {source}", reps + 1)]
    ObservationFailed {
        reps: usize,
        elapsed_s: f64,
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("kernel failed: {0}")]
    Kernel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
