use thiserror::Error;

/// Errors raised anywhere in the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no data: the dataset is empty")]
    EmptyDataset,

    #[error("unsupported dimension {dim} (cap is {cap})")]
    UnsupportedDimension { dim: usize, cap: usize },

    #[error("grid of {points} points exceeds the budget of {budget}")]
    GridBudget { points: u128, budget: u128 },

    #[error("anti-objective parameters: alpha + beta = {sum} < 0")]
    AntiObjective { sum: f64 },

    #[error("inconsistent side information at the query point: lower {lower} > upper {upper}")]
    InconsistentSideInfo { lower: f64, upper: f64 },

    #[error("stall: airspeed {speed} m/s is not positive")]
    Stall { speed: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
