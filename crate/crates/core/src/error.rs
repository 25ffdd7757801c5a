use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("problem is infeasible")]
    Infeasible,
    #[error("problem is unbounded")]
    Unbounded,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("basis matrix is singular")]
    SingularBasis,
    #[error("no nonsingular completion among active rows")]
    DegenerateSelectionFailure,
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("step {step}: MPC problem infeasible")]
    StepInfeasible { step: usize },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
