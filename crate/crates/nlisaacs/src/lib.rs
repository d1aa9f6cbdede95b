//! Configuration, file formats, property suites and subcommands of the
//! `nlisaacs` command-line tool.

use std::path::PathBuf;

use nlisaacs_core::analysis::AnalysisError;
use nlisaacs_core::grid::GridError;
use nlisaacs_core::problem::ProblemError;
use nlisaacs_core::stencil::StencilError;
use nlisaacs_core::{MeasureError, SolverError};
use thiserror::Error;

pub mod checks;
pub mod commands;
pub mod config;
pub mod io;

pub use commands::{run, Cli, Command, Outcome};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_FAILED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn solver_code(e: &SolverError) -> i32 {
    match e {
        SolverError::NoConvergence { .. } | SolverError::Grid(GridError::NonFinite(_)) => EXIT_SOLVER,
        SolverError::Stencil(StencilError::Measure(MeasureError::IntegrationFailure { .. })) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => EXIT_IO,
            Self::Solver(e) => solver_code(e),
            Self::Analysis(AnalysisError::Level { source, .. } | AnalysisError::Solver(source)) => solver_code(source),
            Self::Analysis(AnalysisError::Grid(GridError::NonFinite(_))) | Self::Grid(GridError::NonFinite(_)) => EXIT_SOLVER,
            Self::Analysis(AnalysisError::Measure(MeasureError::IntegrationFailure { .. })) => EXIT_SOLVER,
            Self::Measure(MeasureError::IntegrationFailure { .. }) => EXIT_SOLVER,
            _ => EXIT_CONFIG,
        }
    }
}
