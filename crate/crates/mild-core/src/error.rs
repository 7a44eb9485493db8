use thiserror::Error;

/// Errors surfaced by the deferral library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("training diverged at epoch {epoch} (objective = {objective})")]
    TrainingDiverged { epoch: usize, objective: f64 },

    #[error("verification budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("infeasible target ratios: requested {requested:?}, achieved {achieved:?}")]
    InfeasibleTargets {
        requested: Vec<f64>,
        achieved: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
