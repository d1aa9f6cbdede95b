//! Property suites run by `nlisaacs check`.

use nlisaacs_core::analysis::{stability_excess, time_regularity_constant};
use nlisaacs_core::grid::tent_weight;
use nlisaacs_core::problem::validate_assumptions;
use nlisaacs_core::sampling::Sampler;
use nlisaacs_core::stencil::{cfl_check, nonlocal_weights, SchemeCoefficients};
use nlisaacs_core::stepper::{assemble_diffusion_correction, solve, solve_from, Stepper};
use nlisaacs_core::{ControlProblem, DeltaRule, DiffusionCorrection, Grid, SchemeParams, StencilWeights, MAX_DIM};

use crate::CliError;

/// Violations below `COMPARISON_SLACK · fixed_point_tol` are accepted.
pub const COMPARISON_SLACK: f64 = 10.0;
pub const PARTITION_TOL: f64 = 1e-12;
pub const KAPPA_MASS_TOL: f64 = 1e-6;
/// Largest accepted spread of the time-regularity constant across levels.
pub const REGULARITY_SPREAD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub detail: String,
}

/// Everything a suite needs to run the configured scheme.
pub struct Setup<'a> {
    pub problem: &'a ControlProblem,
    pub grid: &'a Grid,
    pub params: SchemeParams,
    pub corrected: bool,
}

impl Setup<'_> {
    pub fn delta(&self, grid: &Grid) -> Result<f64, CliError> {
        Ok(self.params.resolve_delta(self.problem.measure().sigma(), grid.dx(), grid.dt())?)
    }

    fn correction(&self, grid: &Grid) -> Result<DiffusionCorrection, CliError> {
        if self.corrected {
            Ok(assemble_diffusion_correction(self.problem, grid, self.delta(grid)?)?)
        } else {
            Ok(DiffusionCorrection::disabled())
        }
    }
}

fn random_profile(s: &mut Sampler, grid: &Grid) -> Vec<f64> {
    let amp = s.uniform(-1.0, 1.0);
    let centre = s.uniform(-1.0, 1.0);
    let width = s.uniform(0.3, 2.0);
    let wave = s.uniform(-0.5, 0.5);
    let freq = s.uniform(0.5, 4.0);
    let phase = s.uniform(0.0, 6.0);
    let mut x = [0.0; MAX_DIM];
    (0..grid.node_count())
        .map(|j| {
            grid.coords(j, &mut x);
            let r = x[..grid.dim()].iter().map(|v| (v - centre) * (v - centre)).sum::<f64>().sqrt();
            amp * (1.0 - r / width).max(0.0) + wave * (freq * x[0] + phase).sin()
        })
        .collect()
}

/// Ordered initial pairs stay ordered at every step.
pub fn comparison(setup: &Setup, pairs: usize, seed: u64) -> Result<SuiteResult, CliError> {
    let mut s = Sampler::new(seed);
    let correction = setup.correction(setup.grid)?;
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let u = random_profile(&mut s, setup.grid);
        let v: Vec<f64> = u.iter().map(|x| if s.unit() < 0.3 { *x } else { x + s.uniform(0.0, 0.5) }).collect();
        let fu = solve_from(setup.problem, setup.grid, &setup.params, &correction, 0, u)?;
        let fv = solve_from(setup.problem, setup.grid, &setup.params, &correction, 0, v)?;
        for ((_, a), (_, b)) in fu.slices().zip(fv.slices()) {
            worst = a.iter().zip(b).fold(worst, |m, (x, y)| m.max(x - y));
        }
    }
    let limit = COMPARISON_SLACK * setup.params.fixed_point_tol;
    Ok(SuiteResult { name: "comparison", passed: worst <= limit, worst, detail: format!("{pairs} ordered pairs, largest violation vs limit {limit:e}") })
}

/// `max |U^n| ≤ ‖u₀‖₀ + t_n sup|f|` up to the solver tolerance.
pub fn stability(setup: &Setup) -> Result<SuiteResult, CliError> {
    let field = solve(setup.problem, setup.grid, &setup.params, &setup.correction(setup.grid)?)?;
    let excess = stability_excess(setup.problem, &field);
    let limit = COMPARISON_SLACK * setup.params.fixed_point_tol;
    Ok(SuiteResult { name: "stability", passed: excess <= limit, worst: excess, detail: format!("largest excess over the bound vs limit {limit:e}") })
}

/// Fitted constant of `|U^n - u₀| ≤ K ω̄(t_n)` on three levels.
pub fn time_regularity(setup: &Setup) -> Result<SuiteResult, CliError> {
    let g = setup.grid;
    let ratio = g.dt() / g.dx();
    let sigma = setup.problem.measure().sigma();
    let mut constants = Vec::new();
    for level in 0..3 {
        let dx = g.dx() / f64::from(1 << level);
        let steps = (g.horizon() / (ratio * dx)).round().max(1.0) as usize;
        let grid = Grid::with_steps(g.dim(), dx, g.horizon(), steps, g.box_radius(), g.extension())?;
        let params = match setup.params.delta_rule {
            DeltaRule::Manual => setup.params,
            _ => SchemeParams { delta: setup.delta(&grid)?, delta_rule: DeltaRule::Manual, ..setup.params },
        };
        let field = solve(setup.problem, &grid, &params, &setup.correction(&grid)?)?;
        constants.push(time_regularity_constant(&field, sigma, g.box_radius() / 2.0));
    }
    let max = constants.iter().copied().fold(0.0, f64::max);
    let min = constants.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if max == 0.0 { 1.0 } else { max / min };
    Ok(SuiteResult {
        name: "time_regularity",
        passed: spread <= REGULARITY_SPREAD,
        worst: spread,
        detail: format!("constants {constants:?}, spread vs limit {REGULARITY_SPREAD}"),
    })
}

/// `Σ_j ω_j = 1` at random points and `Σ_j κ_j = ν(|z| > δ)` at random assemblies.
pub fn partition(setup: &Setup, points: usize, assemblies: usize, seed: u64) -> Result<SuiteResult, CliError> {
    let mut s = Sampler::new(seed);
    let g = setup.grid;
    let (dim, dx, l) = (g.dim(), g.dx(), g.box_radius());
    let mut tent_err = 0.0f64;
    let mut x = [0.0; MAX_DIM];
    let mut j = [0i64; MAX_DIM];
    for _ in 0..points {
        for xi in x[..dim].iter_mut() {
            *xi = s.uniform(-l, l);
        }
        let mut sum = 0.0;
        for corner in 0..1usize << dim {
            for i in 0..dim {
                j[i] = (x[i] / dx).floor() as i64 + ((corner >> i) & 1) as i64;
            }
            sum += tent_weight(&j[..dim], &x[..dim], dx);
        }
        tent_err = tent_err.max((sum - 1.0).abs());
    }
    let p = setup.problem;
    let delta = setup.delta(g)?;
    let mass = if p.measure().is_null() { 0.0 } else { p.measure().truncated_mass(delta)? };
    let mut kappa_err = 0.0f64;
    for _ in 0..assemblies {
        let t = s.uniform(0.0, p.horizon());
        for xi in x[..dim].iter_mut() {
            *xi = s.uniform(-l, l);
        }
        let (a, b) = (s.index(p.controls_a()), s.index(p.controls_b()));
        let total: f64 = nonlocal_weights(p, t, &x[..dim], a, b, delta, dx).map_err(nlisaacs_core::SolverError::from)?.iter().map(|(_, w)| w).sum();
        let err = if mass == 0.0 { total.abs() } else { (total - mass).abs() / mass };
        kappa_err = kappa_err.max(err);
    }
    Ok(SuiteResult {
        name: "partition_of_unity",
        passed: tent_err <= PARTITION_TOL && kappa_err <= KAPPA_MASS_TOL,
        worst: tent_err.max(kappa_err),
        detail: format!("tent error {tent_err:e} on {points} points, kappa mass error {kappa_err:e} on {assemblies} assemblies"),
    })
}

/// Every positive-form coefficient is nonnegative whenever the CFL check
/// passes, at the first and last steps. `inject` flips a `κ` of both stencils
/// at the centre node.
pub fn nonnegativity(setup: &Setup, inject: bool) -> Result<SuiteResult, CliError> {
    let (p, g) = (setup.problem, setup.grid);
    let mut stepper = Stepper::new(p, g, &setup.params, &DiffusionCorrection::disabled())?;
    let centre = g.node_count() / 2;
    let mut worst = f64::INFINITY;
    let mut where_ = String::new();
    let mut cfl_ok = true;
    let mut steps = vec![1, g.steps()];
    steps.dedup();
    let mut x = [0.0; MAX_DIM];
    for n in steps {
        let mut samples: Vec<(StencilWeights, StencilWeights, f64)> = Vec::new();
        for node in 0..g.node_count() {
            g.coords(node, &mut x);
            for a in 0..p.controls_a() {
                for b in 0..p.controls_b() {
                    let (mut curr, mut prev) = stepper.stencils(node, a, b, n)?;
                    if inject && node == centre {
                        curr.inject_negative_kappa();
                        prev.inject_negative_kappa();
                    }
                    samples.push((curr, prev, p.discount(g.time(n), &x[..g.dim()], a, b)));
                }
            }
        }
        let cfl = cfl_check(samples.iter().map(|(_, prev, c)| (prev, *c)), g.dt(), setup.params.theta, setup.params.vartheta);
        cfl_ok &= cfl.satisfied;
        for (k, (curr, prev, c)) in samples.iter().enumerate() {
            let coef = SchemeCoefficients::new(curr, prev, *c, g.dt(), setup.params.theta, setup.params.vartheta);
            let (m, label) = coef.min_coefficient();
            if m < worst {
                worst = m;
                where_ = format!("step {n}, sample {k}: {label}");
            }
        }
    }
    let passed = !cfl_ok || worst >= 0.0;
    Ok(SuiteResult {
        name: "coefficient_nonnegativity",
        passed,
        worst,
        detail: if cfl_ok { format!("smallest coefficient at {where_}") } else { "CFL not satisfied, check vacuous".into() },
    })
}

/// Sampling-based validation of the standing assumptions.
pub fn assumptions(setup: &Setup, samples: usize, seed: u64) -> SuiteResult {
    let r = validate_assumptions(setup.problem, samples, setup.grid.box_radius(), seed);
    let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    SuiteResult {
        name: "assumptions",
        passed: failed.is_empty(),
        worst: r.checks.iter().map(|c| c.worst).fold(0.0, f64::max),
        detail: if failed.is_empty() { format!("{} checks", r.checks.len()) } else { format!("failed: {}", failed.join(" ")) },
    }
}
