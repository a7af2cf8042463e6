//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The output pre-activation exceeded the exp cap; raised instead of
    /// silently clamping so gradient checks stay honest.
    #[error("rate overflow at row {row}: pre-activation {value:.4} exceeds cap {cap}")]
    RateOverflow { row: usize, value: f64, cap: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Optimization diverged; `last_iterate` is the last finite point seen.
    #[error("optimization failed: {reason}")]
    OptimizationFailed {
        reason: String,
        last_iterate: Vec<f64>,
    },

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("empty chain")]
    EmptyChain,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown simulation scheme {0} (valid: 1..=6)")]
    UnknownScheme(u32),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("chain mismatch: {0}")]
    ChainMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
