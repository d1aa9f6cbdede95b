//! Convergence-rate harness: theoretical exponents, the time modulus `ω̄`,
//! log-log fits, manufactured sources, refinement studies and
//! consistency-order sweeps.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::grid::{Extension, Grid, GridError, SolutionField};
use crate::levy::{LevyMeasure, MeasureError};
use crate::math::{abs, exp, ln, powf};
use crate::problem::{canonical_problem, jump_operator, k_u0_estimate, ControlProblem, EtaDependence, KMode, ProblemError, ProblemOverrides, TAYLOR_RADIUS};
use crate::stencil::{drift_weights, nonlocal_weights, StencilError};
use crate::stepper::{assemble_diffusion_correction, solve, DeltaRule, DiffusionCorrection, SchemeParams, SolverError};
use crate::MAX_DIM;

/// Absolute tolerance on fitted exponents.
pub const RATE_TOLERANCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("level {level} failed: {source}")]
    Level { level: usize, source: SolverError, partial: Vec<RateRow> },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Stencil(#[from] StencilError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Exponents of the error bound in `Δt` and `Δx` under the optimal `δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoreticalRate {
    pub time: f64,
    pub space: f64,
    /// Logarithmic factors present (`σ = 1`).
    pub log_factors: bool,
    pub branch: &'static str,
}

/// Exponent table by regime of `σ`, dependence of `η` and finiteness of `K(u₀)`.
pub fn theoretical_rate(sigma: f64, dependence: EtaDependence, k_u0_finite: bool) -> TheoreticalRate {
    if sigma < 1.0 {
        return TheoreticalRate { time: 0.5, space: 0.5, log_factors: false, branch: "sigma<1" };
    }
    if sigma == 1.0 {
        return TheoreticalRate { time: 0.5, space: 0.5, log_factors: true, branch: "sigma=1" };
    }
    let h = (2.0 - sigma) / (2.0 * sigma);
    match dependence {
        EtaDependence::XtDependent => TheoreticalRate { time: h, space: h, log_factors: false, branch: "xt_dependent" },
        EtaDependence::XOnly => TheoreticalRate {
            time: if k_u0_finite { 0.5 } else { 1.0 / (2.0 * sigma) },
            space: h,
            log_factors: false,
            branch: if k_u0_finite { "x_only, K(u0) finite" } else { "x_only" },
        },
        EtaDependence::Constant => TheoreticalRate {
            time: if k_u0_finite { 0.5 } else { 1.0 / (2.0 * sigma) },
            space: (2.0 - sigma) / 2.0,
            log_factors: false,
            branch: if k_u0_finite { "constant, K(u0) finite" } else { "constant" },
        },
    }
}

/// Error-bound terms `Δt^a δ^b Δx^c` (logarithms dropped).
pub fn error_terms(sigma: f64, dependence: EtaDependence, k_u0_finite: bool) -> Vec<(f64, f64, f64)> {
    if sigma < 1.0 {
        return alloc::vec![(0.5, 0.0, 0.0), (0.0, 0.0, 0.5), (0.0, 1.0 - sigma / 2.0, 0.0)];
    }
    if sigma == 1.0 {
        return alloc::vec![(0.5, 0.0, 0.0), (0.0, 0.0, 0.5), (0.0, 0.5, 0.0)];
    }
    let slow = 1.0 / (2.0 * sigma);
    let tail = (0.0, 1.0 - sigma / 2.0, 0.0);
    match dependence {
        EtaDependence::XtDependent => alloc::vec![(slow, 0.0, 0.0), (0.5, 1.0 - sigma, 0.0), (0.0, 1.0 - sigma, 0.5), tail],
        EtaDependence::XOnly => {
            let t = if k_u0_finite { 0.5 } else { slow };
            alloc::vec![(t, 0.0, 0.0), (0.0, 1.0 - sigma, 0.5), tail]
        }
        EtaDependence::Constant => {
            let t = if k_u0_finite { 0.5 } else { slow };
            alloc::vec![(t, 0.0, 0.0), (0.0, (1.0 - sigma) / 2.0, 0.5), tail]
        }
    }
}

/// Regime of the time modulus `ω̄`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModulusBranch {
    Linear,
    LinearLog,
    Holder,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulusSpec {
    pub sigma: f64,
}

impl ModulusSpec {
    pub fn new(sigma: f64) -> Self {
        Self { sigma }
    }

    pub fn branch(&self) -> ModulusBranch {
        if self.sigma < 1.0 {
            ModulusBranch::Linear
        } else if self.sigma == 1.0 {
            ModulusBranch::LinearLog
        } else {
            ModulusBranch::Holder
        }
    }

    /// `|r|`, `|r|(1 + |ln r|)` or `|r|^{1/σ}`; zero at `r = 0`.
    pub fn omega_bar(&self, r: f64) -> f64 {
        let r = abs(r);
        if r == 0.0 {
            return 0.0;
        }
        match self.branch() {
            ModulusBranch::Linear => r,
            ModulusBranch::LinearLog => r * (1.0 + abs(ln(r))),
            ModulusBranch::Holder => powf(r, 1.0 / self.sigma),
        }
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Fit {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (ln(*x), ln(*y))).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return Fit { slope: f64::NAN, intercept: f64::NAN, residual: f64::NAN };
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            r * r
        })
        .sum();
    Fit { slope, intercept, residual: libm::sqrt(rss / n) }
}

/// One refinement level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub dx: f64,
    pub dt: f64,
    pub delta: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub label: String,
    pub rows: Vec<RateRow>,
    /// Fit of the error against `Δx`.
    pub space_fit: Fit,
    /// Fit of the error against `Δt`.
    pub time_fit: Fit,
    pub theory: TheoreticalRate,
    /// Smallest exponent (in `Δx`) of the bound terms under the chosen coupling.
    pub expected: f64,
    pub tolerance: f64,
    pub degenerate: bool,
    pub passed: bool,
}

impl RateReport {
    /// Builds a report from rows and the expected exponent.
    pub fn from_rows(label: impl Into<String>, rows: Vec<RateRow>, theory: TheoreticalRate, expected: f64) -> Self {
        let dx: Vec<f64> = rows.iter().map(|r| r.dx).collect();
        let dt: Vec<f64> = rows.iter().map(|r| r.dt).collect();
        let err: Vec<f64> = rows.iter().map(|r| r.error).collect();
        let degenerate = err.iter().all(|e| *e == 0.0);
        let space_fit = fit_loglog(&dx, &err);
        let time_fit = fit_loglog(&dt, &err);
        let passed = degenerate || space_fit.slope >= expected - RATE_TOLERANCE;
        Self { label: label.into(), rows, space_fit, time_fit, theory, expected, tolerance: RATE_TOLERANCE, degenerate, passed }
    }
}

/// A smooth function `v(t, x)` with derivatives, used as an exact solution.
pub trait SmoothTarget: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Row-major `N × N`.
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// `v(t, x) = e^{-λ t} cos(ω x₁)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayingCosine {
    pub rate: f64,
    pub frequency: f64,
}

impl SmoothTarget for DecayingCosine {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        exp(-self.rate * t) * libm::cos(self.frequency * x[0])
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        -self.rate * self.value(t, x)
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = -self.frequency * exp(-self.rate * t) * libm::sin(self.frequency * x[0]);
    }
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = -self.frequency * self.frequency * self.value(t, x);
    }
}

/// `v(t, x) = e^{-λ t} exp(-|x|²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayingGaussian {
    pub rate: f64,
}

impl SmoothTarget for DecayingGaussian {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        exp(-self.rate * t - x.iter().map(|v| v * v).sum::<f64>())
    }
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        -self.rate * self.value(t, x)
    }
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let v = self.value(t, x);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -2.0 * xi * v;
        }
    }
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let v = self.value(t, x);
        let n = x.len();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = 4.0 * x[i] * x[j] * v - if i == j { 2.0 * v } else { 0.0 };
            }
        }
    }
}

/// Same problem with `f := v_t + c v - b·∇v - I[v]` per control pair, and
/// `u₀ := v(0, ·)`, so that `v` solves it exactly.
pub fn manufactured_source(problem: &ControlProblem, target: Arc<dyn SmoothTarget>) -> Result<ControlProblem, AnalysisError> {
    let base = problem.clone();
    let n = problem.space_dim();
    let v = target.clone();
    let source = move |t: f64, x: &[f64], a: usize, b: usize| -> Result<f64, MeasureError> {
        let mut grad = [0.0; MAX_DIM];
        let mut hess = [0.0; MAX_DIM * MAX_DIM];
        v.gradient(t, x, &mut grad[..n]);
        v.hessian(t, x, &mut hess[..n * n]);
        let mut drift = [0.0; MAX_DIM];
        base.drift(t, x, a, b, &mut drift[..n]);
        let adv: f64 = (0..n).map(|i| drift[i] * grad[i]).sum();
        let jump = if base.has_no_jumps() {
            0.0
        } else {
            let phi = |y: &[f64]| v.value(t, y);
            jump_operator(base.measure(), |z, out| base.jump(t, x, a, b, z, out), &phi, x, &grad[..n], &hess[..n * n], TAYLOR_RADIUS)?
        };
        Ok(v.time_derivative(t, x) + base.discount(t, x, a, b) * v.value(t, x) - adv - jump)
    };
    // surface oracle failures before the solver sees them
    let origin = [0.0; MAX_DIM];
    for a in 0..problem.controls_a() {
        for b in 0..problem.controls_b() {
            source(0.0, &origin[..n], a, b)?;
        }
    }
    let t0 = target.clone();
    Ok(problem
        .clone()
        .with_name(format!("{}+manufactured", problem.name()))
        .with_source(Arc::new(move |t, x, a, b| source(t, x, a, b).unwrap_or(f64::NAN)))
        .with_initial(Arc::new(move |x| t0.value(0.0, x))))
}

/// How `Δt` and `δ` follow `Δx` in a refinement study:
/// `Δt = dt_coeff · Δx^{dt_power}` (rounded so it divides `T`) and
/// `δ = clamp(delta_coeff · Δx^{delta_power}, Δx, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub dt_coeff: f64,
    pub dt_power: f64,
    pub delta_coeff: f64,
    pub delta_power: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Self { dt_coeff: 1.0, dt_power: 1.0, delta_coeff: 1.0, delta_power: 1.0 }
    }
}

impl Coupling {
    pub fn steps(&self, horizon: f64, dx: f64) -> usize {
        let dt = self.dt_coeff * powf(dx, self.dt_power);
        libm::ceil(horizon / dt - 1e-9).max(1.0) as usize
    }

    pub fn delta(&self, dx: f64) -> f64 {
        (self.delta_coeff * powf(dx, self.delta_power)).max(dx).min(1.0)
    }

    /// Smallest `Δx`-exponent of the bound terms under this coupling.
    pub fn expected_exponent(&self, terms: &[(f64, f64, f64)], has_jumps: bool) -> f64 {
        terms.iter().filter(|t| has_jumps || t.1 == 0.0).map(|(a, b, c)| a * self.dt_power + b * self.delta_power + c).fold(f64::INFINITY, f64::min)
    }
}

/// Reference solution of a refinement study.
#[derive(Clone)]
pub enum Reference {
    Exact(Arc<dyn SmoothTarget>),
    /// Solve on a grid `factor` times finer than the finest level.
    FineGrid {
        factor: usize,
    },
}

/// Parameters of [`refinement_study`].
#[derive(Clone)]
pub struct StudySpec {
    pub base_dx: f64,
    pub levels: usize,
    pub box_radius: f64,
    pub extension: Extension,
    pub coupling: Coupling,
    pub reference: Reference,
    /// `θ`, `ϑ`, tolerances and solver; `δ` comes from the coupling.
    pub params: SchemeParams,
    pub corrected: bool,
    /// `K(u₀) < ∞`; estimated when `None`.
    pub k_u0_finite: Option<bool>,
}

fn level_grid(problem: &ControlProblem, spec: &StudySpec, dx: f64) -> Result<Grid, GridError> {
    Grid::with_steps(problem.space_dim(), dx, problem.horizon(), spec.coupling.steps(problem.horizon(), dx), spec.box_radius, spec.extension)
}

fn level_solve(problem: &ControlProblem, spec: &StudySpec, grid: &Grid) -> Result<SolutionField, SolverError> {
    let delta = spec.coupling.delta(grid.dx());
    let params = SchemeParams { delta, delta_rule: DeltaRule::Manual, ..spec.params };
    let correction = if spec.corrected { assemble_diffusion_correction(problem, grid, delta)? } else { DiffusionCorrection::disabled() };
    solve(problem, grid, &params, &correction)
}

/// `max` over shared time levels and nodes with `|x_i| ≤ radius` of `|U - reference|`.
pub fn field_error(field: &SolutionField, radius: f64, reference: &dyn Fn(usize, f64, usize) -> Option<f64>) -> f64 {
    let g = field.grid();
    let mut err = 0.0f64;
    for (n, slice) in field.slices() {
        let t = g.time(n);
        for (j, v) in slice.iter().enumerate() {
            if !g.in_window(j, radius) {
                continue;
            }
            if let Some(r) = reference(n, t, j) {
                err = err.max(abs(v - r));
            }
        }
    }
    err
}

/// Solves on `levels` successively halved meshes and fits the error
/// exponent against the bound implied by the coupling.
pub fn refinement_study(problem: &ControlProblem, spec: &StudySpec) -> Result<RateReport, AnalysisError> {
    if spec.levels < 3 {
        return Err(AnalysisError::InvalidStudy("a refinement study needs at least 3 levels".into()));
    }
    let sigma = problem.measure().sigma();
    let k_finite = match spec.k_u0_finite {
        Some(k) => k,
        None => k_u0_estimate(problem, KMode::Direct, 0.5, spec.box_radius / 2.0, 41)?.is_finite(),
    };
    let theory = theoretical_rate(sigma, problem.eta_dependence(), k_finite);
    let terms = error_terms(sigma, problem.eta_dependence(), k_finite);
    let expected = spec.coupling.expected_exponent(&terms, !problem.has_no_jumps());
    let window = spec.box_radius / 2.0;
    let finest = spec.base_dx / (1u64 << (spec.levels - 1)) as f64;

    let reference_field = match &spec.reference {
        Reference::FineGrid { factor } => {
            if *factor < 4 || !factor.is_power_of_two() {
                return Err(AnalysisError::InvalidStudy("fine-grid reference factor must be a power of two >= 4".into()));
            }
            let grid = level_grid(problem, spec, finest / *factor as f64)?;
            Some(level_solve(problem, spec, &grid).map_err(|source| AnalysisError::Level { level: spec.levels, source, partial: Vec::new() })?)
        }
        Reference::Exact(_) => None,
    };

    let mut rows = Vec::new();
    for level in 0..spec.levels {
        let dx = spec.base_dx / (1u64 << level) as f64;
        let grid = level_grid(problem, spec, dx)?;
        let field = level_solve(problem, spec, &grid).map_err(|source| AnalysisError::Level { level, source, partial: rows.clone() })?;
        let error = match (&spec.reference, &reference_field) {
            (Reference::Exact(v), _) => field_error(&field, window, &|_, t, j| {
                let mut x = [0.0; MAX_DIM];
                grid.coords(j, &mut x);
                Some(v.value(t, &x[..grid.dim()]))
            }),
            (_, Some(fine)) => {
                let fg = fine.grid();
                let ratio = libm::round(dx / fg.dx()) as i64;
                field_error(&field, window, &|_, t, j| {
                    let m = libm::round(t / fg.dt());
                    if abs(m * fg.dt() - t) > 1e-9 * fg.dt() {
                        return None;
                    }
                    let mut idx = grid.index_of(j);
                    for d in 0..grid.dim() {
                        idx[d] *= ratio;
                    }
                    fg.flat_of(&idx).map(|k| fine.slice(m as usize)[k])
                })
            }
            _ => unreachable!(),
        };
        log::info!("level {level}: dx = {dx}, dt = {}, error = {error:e}", grid.dt());
        rows.push(RateRow { dx, dt: grid.dt(), delta: spec.coupling.delta(dx), error });
    }
    Ok(RateReport::from_rows(problem.name(), rows, theory, expected))
}

/// Result of a `δ` sweep against the smallest-`δ` solution.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationReport {
    pub deltas: Vec<f64>,
    pub differences: Vec<f64>,
    pub fit: Fit,
    pub expected: f64,
    pub degenerate: bool,
    pub passed: bool,
}

/// Solves with each `δ` on the same grid and fits `‖u_δ - u_{δ_min}‖` in `δ`.
pub fn truncation_distance(problem: &ControlProblem, grid: &Grid, params: &SchemeParams, deltas: &[f64]) -> Result<TruncationReport, AnalysisError> {
    if deltas.len() < 3 {
        return Err(AnalysisError::InvalidStudy("need at least three truncation radii".into()));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let smallest = *sorted.last().expect("nonempty");
    let run = |d: f64| solve(problem, grid, &SchemeParams { delta: d, delta_rule: DeltaRule::Manual, ..*params }, &DiffusionCorrection::disabled());
    let reference = run(smallest)?;
    let window = grid.box_radius() / 2.0;
    let mut differences = Vec::new();
    let used: Vec<f64> = sorted[..sorted.len() - 1].to_vec();
    for &d in &used {
        let f = run(d)?;
        differences.push(field_error(&f, window, &|n, _, j| Some(reference.slice(n)[j])));
    }
    let sigma = problem.measure().sigma();
    let expected = 1.0 - sigma / 2.0;
    let degenerate = differences.iter().all(|e| *e == 0.0);
    let fit = fit_loglog(&used, &differences);
    let passed = degenerate || fit.slope >= expected - RATE_TOLERANCE;
    Ok(TruncationReport { deltas: used, differences, fit, expected, degenerate, passed })
}

/// `max_n ‖U^n - U^0‖_∞ / ω̄(t_n)` over `|x| ≤ radius`.
pub fn time_regularity_constant(field: &SolutionField, sigma: f64, radius: f64) -> f64 {
    let g = field.grid();
    let modulus = ModulusSpec::new(sigma);
    let u0 = field.slice(0);
    let mut k = 0.0f64;
    for (n, s) in field.slices().skip(1) {
        let d = s.iter().zip(u0).enumerate().filter(|(j, _)| g.in_window(*j, radius)).map(|(_, (a, b))| abs(a - b)).fold(0.0, f64::max);
        k = k.max(d / modulus.omega_bar(g.time(n)));
    }
    k
}

/// Largest excess of `max_j |U^n_j|` over `‖u₀‖₀ + t_n sup|f|` (sup over
/// nodes, time levels and control pairs); nonpositive when the bound holds.
pub fn stability_excess(problem: &ControlProblem, field: &SolutionField) -> f64 {
    let g = field.grid();
    let n = g.dim();
    let mut x = [0.0; MAX_DIM];
    let mut u0_sup = 0.0f64;
    let mut f_sup = 0.0f64;
    for j in 0..g.node_count() {
        g.coords(j, &mut x);
        u0_sup = u0_sup.max(abs(problem.initial(&x[..n])));
        for step in 0..=g.steps() {
            for a in 0..problem.controls_a() {
                for b in 0..problem.controls_b() {
                    f_sup = f_sup.max(abs(problem.source(g.time(step), &x[..n], a, b)));
                }
            }
        }
    }
    field.slices().map(|(k, s)| s.iter().fold(0.0f64, |m, v| m.max(abs(*v))) - (u0_sup + g.time(k) * f_sup)).fold(f64::NEG_INFINITY, f64::max)
}

/// Discretisation ingredient whose consistency error is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ingredient {
    /// `|I[φ] - I^δ[φ]|` in `δ`, expected slope `2 - σ`.
    Truncation,
    /// Upwind difference against `b·∇φ` in `Δx`, expected slope 1.
    Drift,
    /// `|J_h[φ] - J^δ[φ]|` in `Δx` at fixed `δ`, expected slope 2.
    Quadrature,
    /// `|I_δ[φ] - tr(a_δ D²φ)|` in `δ`, expected slope `3 - σ`.
    LocalCorrection,
}

impl Ingredient {
    pub fn name(self) -> &'static str {
        match self {
            Self::Truncation => "truncation",
            Self::Drift => "drift",
            Self::Quadrature => "quadrature",
            Self::LocalCorrection => "local_correction",
        }
    }

    pub fn expected_slope(self, sigma: f64) -> f64 {
        match self {
            Self::Truncation => 2.0 - sigma,
            Self::Drift => 1.0,
            Self::Quadrature => 2.0,
            Self::LocalCorrection => 3.0 - sigma,
        }
    }

    /// Default sweep of the swept parameter.
    pub fn default_sweep(self) -> Vec<f64> {
        let range = match self {
            Self::Quadrature => 4..10,
            Self::Drift => 3..9,
            _ => 1..7,
        };
        range.map(|k| powf(0.5, k as f64)).collect()
    }
}

impl core::str::FromStr for Ingredient {
    type Err = AnalysisError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truncation" => Ok(Self::Truncation),
            "drift" => Ok(Self::Drift),
            "quadrature" => Ok(Self::Quadrature),
            "local_correction" => Ok(Self::LocalCorrection),
            other => Err(AnalysisError::InvalidStudy(format!("unknown ingredient `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    pub ingredient: Ingredient,
    pub sigma: f64,
    pub sweep: Vec<f64>,
    pub errors: Vec<f64>,
    pub fit: Fit,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Evaluation point of the consistency sweeps (a node of every dyadic mesh).
pub const PROBE_POINT: f64 = 0.5;
/// Truncation radius held fixed in the quadrature sweep.
pub const QUADRATURE_DELTA: f64 = 0.25;
/// Acceptance tolerance on consistency slopes.
pub const CONSISTENCY_TOLERANCE: f64 = 0.15;

/// `k`-th derivative of `exp(-x²)`, via Hermite polynomials.
fn gaussian_derivative(k: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, 2.0 * x);
    if k == 0 {
        return exp(-x * x);
    }
    for m in 1..k {
        let h2 = 2.0 * x * h1 - 2.0 * m as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    sign * h1 * exp(-x * x)
}

/// `φ(x + y) - Σ_{k<from} φ^{(k)}(x) y^k / k!` for `φ = exp(-x²)`, by series
/// when `|y|` is small and directly otherwise.
fn gaussian_remainder(x: f64, y: f64, from: usize) -> f64 {
    if abs(y) < 0.05 {
        let mut s = 0.0;
        let mut term = 1.0;
        for k in 0..=from + 8 {
            if k >= from {
                s += gaussian_derivative(k, x) * term;
            }
            term *= y / (k + 1) as f64;
        }
        s
    } else {
        let mut s = exp(-(x + y) * (x + y));
        let mut term = 1.0;
        for k in 0..from {
            s -= gaussian_derivative(k, x) * term;
            term *= y / (k + 1) as f64;
        }
        s
    }
}

fn asymmetric_jump(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        0.5 * z
    }
}

/// Consistency error of one ingredient on `φ(x) = exp(-x²)` at
/// [`PROBE_POINT`] for a unit-scale truncated stable measure of order `σ`.
pub fn consistency_order(ingredient: Ingredient, sigma: f64, sweep: &[f64]) -> Result<ConsistencyReport, AnalysisError> {
    if sweep.len() < 3 {
        return Err(AnalysisError::InvalidStudy("need at least three sweep values".into()));
    }
    let measure = LevyMeasure::truncated_stable(1, sigma, 1.0)?;
    let x0 = PROBE_POINT;
    let mut errors = Vec::new();
    for &h in sweep {
        let e = match ingredient {
            Ingredient::Truncation => measure.small_shell_integral(h, 1, |z, out| out[0] = gaussian_remainder(x0, z[0], 2))?[0],
            Ingredient::Drift => {
                let phi = |x: f64| exp(-x * x);
                let d = drift_weights(&[1.0], h);
                let upwind: f64 = d.iter().map(|(o, w)| w * (phi(x0 + o[0] as f64 * h) - phi(x0))).sum();
                upwind - gaussian_derivative(1, x0)
            }
            Ingredient::Quadrature => {
                let p = canonical_problem("fractional_linear", &ProblemOverrides { sigma: Some(sigma), ..Default::default() })?;
                let kappa = nonlocal_weights(&p, 0.0, &[x0], 0, 0, QUADRATURE_DELTA, h)?;
                let phi = |x: f64| exp(-x * x);
                let discrete: f64 = kappa.iter().map(|(o, w)| w * (phi(x0 + o[0] as f64 * h) - phi(x0))).sum();
                let exact = measure.shell_integral(QUADRATURE_DELTA, 1, |z, out| out[0] = phi(x0 + z[0]) - phi(x0))?[0];
                discrete - exact
            }
            Ingredient::LocalCorrection => measure.small_shell_integral(h, 1, |z, out| out[0] = gaussian_remainder(x0, asymmetric_jump(z[0]), 3))?[0],
        };
        errors.push(abs(e));
    }
    let fit = fit_loglog(sweep, &errors);
    let expected = ingredient.expected_slope(sigma);
    let passed = abs(fit.slope - expected) <= CONSISTENCY_TOLERANCE;
    Ok(ConsistencyReport { ingredient, sigma, sweep: sweep.to_vec(), errors, fit, expected, tolerance: CONSISTENCY_TOLERANCE, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn theoretical_rate_examples() {
        let r = theoretical_rate(1.5, EtaDependence::Constant, false);
        assert_relative_eq!(r.time, 1.0 / 3.0);
        assert_relative_eq!(r.space, 0.25);
        for dep in [EtaDependence::Constant, EtaDependence::XOnly, EtaDependence::XtDependent] {
            for k in [true, false] {
                let r = theoretical_rate(0.5, dep, k);
                assert_eq!((r.time, r.space), (0.5, 0.5));
            }
        }
        let r = theoretical_rate(1.5, EtaDependence::Constant, true);
        assert_eq!((r.time, r.space), (0.5, 0.25));
        let r = theoretical_rate(1.5, EtaDependence::XtDependent, true);
        assert_relative_eq!(r.time, 1.0 / 6.0);
        assert!(theoretical_rate(1.0, EtaDependence::XOnly, false).log_factors);
    }

    #[test]
    fn optimal_couplings_reproduce_the_table() {
        let dx_only = Coupling::default();
        for (sigma, dep) in [(1.5, EtaDependence::Constant), (1.2, EtaDependence::Constant), (0.5, EtaDependence::XOnly)] {
            let e = dx_only.expected_exponent(&error_terms(sigma, dep, true), true);
            assert_relative_eq!(e, theoretical_rate(sigma, dep, true).space.min(0.5), epsilon = 1e-12);
        }
        let s = 1.5;
        let c34 = Coupling { delta_power: 1.0 / s, ..Coupling::default() };
        assert_relative_eq!(c34.expected_exponent(&error_terms(s, EtaDependence::XOnly, true), true), (2.0 - s) / (2.0 * s), epsilon = 1e-12);
        let t = 1.0 / (2.0 * s);
        let c33 = Coupling { delta_power: 1.0 / s, ..Coupling::default() };
        assert_relative_eq!(c33.expected_exponent(&error_terms(s, EtaDependence::XtDependent, false), true), ((2.0 - s) / (2.0 * s)).min(t), epsilon = 1e-12);
    }

    #[test]
    fn modulus_branches() {
        assert_eq!(ModulusSpec::new(0.5).omega_bar(0.25), 0.25);
        assert_relative_eq!(ModulusSpec::new(1.0).omega_bar(0.25), 0.25 * (1.0 + 4f64.ln()));
        assert_relative_eq!(ModulusSpec::new(1.5).omega_bar(0.125), 0.25);
        assert_eq!(ModulusSpec::new(1.0).omega_bar(0.0), 0.0);
        assert!(ModulusSpec::new(1.0).omega_bar(1e-300).is_finite());
    }

    proptest! {
        #[test]
        fn fit_recovers_exact_powers(p in -3.0f64..3.0, c in 0.01f64..100.0) {
            let xs: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(p)).collect();
            let f = fit_loglog(&xs, &ys);
            prop_assert!((f.slope - p).abs() <= 1e-6);
            prop_assert!(f.residual <= 1e-6);
        }

        #[test]
        fn rate_is_piecewise_constant_in_dependence(sigma in 0.0f64..1.0, k in proptest::bool::ANY) {
            let a = theoretical_rate(sigma, EtaDependence::Constant, k);
            let b = theoretical_rate(sigma, EtaDependence::XtDependent, !k);
            prop_assert_eq!((a.time, a.space), (b.time, b.space));
        }
    }

    #[test]
    fn truncation_error_matches_closed_form() {
        // ∫_{|z|≤δ} (φ(x+z) - φ - zφ') |z|^{-1-σ} dz = 2 Σ_{k even ≥ 2} φ^{(k)} δ^{k-σ} / (k! (k-σ))
        for sigma in [0.5, 1.5] {
            let m = LevyMeasure::truncated_stable(1, sigma, 1.0).unwrap();
            for delta in [0.5, 0.0625] {
                let v = m.small_shell_integral(delta, 1, |z, out| out[0] = gaussian_remainder(0.5, z[0], 2)).unwrap()[0];
                let mut exact = 0.0;
                let mut fact = 1.0;
                for k in 1..40 {
                    fact *= k as f64;
                    if k % 2 == 0 {
                        exact += 2.0 * gaussian_derivative(k, 0.5) * delta.powf(k as f64 - sigma) / (fact * (k as f64 - sigma));
                    }
                }
                assert_relative_eq!(v, exact, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_derivatives_match_differences() {
        for k in 0..6 {
            let h = 1e-4;
            let fd = (gaussian_derivative(k, 0.3 + h) - gaussian_derivative(k, 0.3 - h)) / (2.0 * h);
            assert_relative_eq!(fd, gaussian_derivative(k + 1, 0.3), max_relative = 1e-6);
        }
    }

    #[test]
    fn consistency_orders() {
        for sigma in [0.5, 1.5] {
            for ing in [Ingredient::Truncation, Ingredient::Drift, Ingredient::Quadrature, Ingredient::LocalCorrection] {
                let r = consistency_order(ing, sigma, &ing.default_sweep()).unwrap();
                assert!(r.passed, "{ing:?} sigma {sigma}: slope {} vs {} ({:?})", r.fit.slope, r.expected, r.errors);
            }
        }
    }

    fn frac_series(sigma: f64, x: f64) -> f64 {
        let mut s = 0.0;
        let mut fact = 1.0;
        for k in 1..20 {
            fact *= (2 * k - 1) as f64 * (2 * k) as f64;
            s += (-1f64).powi(k) / (fact * (2.0 * k as f64 - sigma));
        }
        x.cos() * 2.0 * s
    }

    #[test]
    fn manufactured_source_examples() {
        struct Constant;
        impl SmoothTarget for Constant {
            fn value(&self, _: f64, _: &[f64]) -> f64 {
                2.5
            }
            fn time_derivative(&self, _: f64, _: &[f64]) -> f64 {
                0.0
            }
            fn gradient(&self, _: f64, _: &[f64], out: &mut [f64]) {
                out.fill(0.0)
            }
            fn hessian(&self, _: f64, _: &[f64], out: &mut [f64]) {
                out.fill(0.0)
            }
        }
        let p = canonical_problem("fractional_linear", &ProblemOverrides::default()).unwrap().with_discount(Arc::new(|_, _, _, _| 1.0));
        let m = manufactured_source(&p, Arc::new(Constant)).unwrap();
        assert_relative_eq!(m.source(0.3, &[0.7], 0, 0), 2.5, epsilon = 1e-12);

        struct Line;
        impl SmoothTarget for Line {
            fn value(&self, _: f64, x: &[f64]) -> f64 {
                x[0]
            }
            fn time_derivative(&self, _: f64, _: &[f64]) -> f64 {
                0.0
            }
            fn gradient(&self, _: f64, _: &[f64], out: &mut [f64]) {
                out[0] = 1.0
            }
            fn hessian(&self, _: f64, _: &[f64], out: &mut [f64]) {
                out.fill(0.0)
            }
        }
        let p = canonical_problem("fractional_linear", &ProblemOverrides { drift: Some(1.0), ..Default::default() }).unwrap();
        let m = manufactured_source(&p, Arc::new(Line)).unwrap();
        assert_relative_eq!(m.source(0.0, &[0.4], 0, 0), -1.0, epsilon = 1e-12);

        for sigma in [0.5, 1.5] {
            let p = canonical_problem("fractional_linear", &ProblemOverrides { sigma: Some(sigma), ..Default::default() }).unwrap();
            let m = manufactured_source(&p, Arc::new(DecayingCosine { rate: 1.0, frequency: 1.0 })).unwrap();
            for (t, x) in [(0.0f64, 0.3f64), (0.5, -1.2), (1.0, 2.0)] {
                let exact = -(-t).exp() * x.cos() - (-t).exp() * frac_series(sigma, x);
                assert_relative_eq!(m.source(t, &[x], 0, 0), exact, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn stationary_study_is_degenerate() {
        let p = ControlProblem::new("still", 1, LevyMeasure::zero(1).unwrap(), 0.5).unwrap().with_initial(Arc::new(|x: &[f64]| (1.0 - x[0].abs()).max(0.0)));
        let spec = StudySpec {
            base_dx: 0.25,
            levels: 3,
            box_radius: 2.0,
            extension: Extension::ConstantNearest,
            coupling: Coupling::default(),
            reference: Reference::FineGrid { factor: 4 },
            params: SchemeParams::explicit(1.0),
            corrected: false,
            k_u0_finite: Some(true),
        };
        let r = refinement_study(&p, &spec).unwrap();
        assert!(r.degenerate && r.passed);
        assert!(matches!(refinement_study(&p, &StudySpec { levels: 2, ..spec }), Err(AnalysisError::InvalidStudy(_))));
    }

    #[test]
    fn zero_jump_truncation_sweep_is_degenerate() {
        let p = canonical_problem("linear_advection", &ProblemOverrides::default()).unwrap().with_horizon(0.25).unwrap();
        let g = Grid::new(1, 1.0 / 16.0, 0.25, 1.0 / 32.0, 2.0, Extension::ConstantNearest).unwrap();
        let r = truncation_distance(&p, &g, &SchemeParams::explicit(1.0), &[0.5, 0.25, 0.125, 0.0625]).unwrap();
        assert!(r.degenerate && r.passed);
    }
}
