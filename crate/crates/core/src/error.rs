use thiserror::Error;

use crate::grid::ScalarField;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite values produced by {0}")]
    NumericalBlowup(String),
    #[error("degenerate form: min u = {min_u:e} is not above the floor {floor:e}")]
    DegenerateForm { min_u: f64, floor: f64 },
    #[error("cohomology mismatch: {0}")]
    CohomologyMismatch(String),
    #[error("bad series: {0}")]
    BadSeries(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64, best: Box<ScalarField> },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
