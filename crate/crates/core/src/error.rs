use thiserror::Error;

/// Errors produced by the knockoff machinery.
#[derive(Debug, Error)]
pub enum Error {
    /// A table (or pair table) would exceed the in-memory enumeration cap.
    #[error("table with {entries} entries exceeds the enumeration cap of {cap}{hint}")]
    Size {
        entries: u128,
        cap: usize,
        hint: &'static str,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// Conditioning on a label that has zero probability under the model.
    #[error("label y={label} has zero probability; cannot condition on it")]
    DegenerateLabel { label: u8 },

    /// Conditioning on (or sampling at) a zero-mass event.
    #[error("support error: {0}")]
    Support(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    Singular(String),

    #[error("coordinate descent did not converge after {iterations} sweeps (last max change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
