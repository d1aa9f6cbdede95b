//! Monotone difference-quadrature schemes for nonlocal Isaacs and Bellman
//! equations driven by pure-jump Lévy processes.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature. The `parallel` feature distributes node updates over a
//! rayon pool; results are bitwise identical for any thread count.
//!
//! Module map:
//!
//! * [`levy`] - Lévy measures, truncated shell integrals and `Γ(σ, δ)`.
//! * [`problem`] - control problem data, canonical problems, assumption checks.
//! * [`grid`] - uniform grid, tent interpolation, solution fields.
//! * [`stencil`] - upwind drift and nonlocal quadrature weights, CFL checks.
//! * [`stepper`] - the θ/ϑ time stepping and the local-diffusion correction.
//! * [`analysis`] - rate tables, manufactured solutions, refinement studies.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
mod banded;
mod error;
pub mod grid;
pub mod levy;
mod math;
mod par;
pub mod problem;
mod quadrature;
pub mod sampling;
pub mod stencil;
pub mod stepper;

pub use error::Error;
pub use grid::{Extension, Grid, SolutionField};
pub use levy::{gamma_factor, LevyMeasure, MeasureError, MeasureKind};
pub use problem::{canonical_problem, ControlProblem, EtaDependence, KEstimate, ProblemOverrides};
pub use stencil::{CflReport, StencilWeights};
pub use stepper::{DeltaRule, DiffusionCorrection, ImplicitSolver, SchemeParams, SolverError};

/// Largest supported spatial dimension `N`.
pub const MAX_DIM: usize = 3;

/// Multi-index offset on the grid; axes beyond the problem dimension are zero.
pub type Offset = [i64; MAX_DIM];
