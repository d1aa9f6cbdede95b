use alloc::string::String;

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::grid::GridError;
use crate::levy::MeasureError;
use crate::problem::ProblemError;
use crate::stepper::SolverError;

/// Any failure raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("configuration error: {0}")]
    Config(String),
}
