//! Time stepping of the θ/ϑ scheme
//!
//! `U^n_j = U^{n-1}_j - Δt min_a max_b { -f^{n-1} + c^n U^{n-1}_j - θ D[U]^n - (1-θ) D[U]^{n-1} - ϑ J[U]^n - (1-ϑ) J[U]^{n-1} }`
//!
//! and of the fully implicit scheme with the local diffusion correction
//!
//! `U^n_j = U^{n-1}_j - Δt min_a max_b { -f^n + c^n U^n_j - D[U]^n - J[U]^n - L[U]^n }`.
//!
//! Every node equation is a strictly increasing piecewise-linear function
//! of the node value, so the implicit stage is solved either by nonlinear
//! Jacobi sweeps (each node solved exactly) or by policy iteration with a
//! banded direct solve.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::banded::{BandLu, BandMatrix};
use crate::grid::{Grid, GridError, Lookup, SolutionField};
use crate::math::{abs, powf};
use crate::par::map_range;
use crate::problem::{ControlProblem, EtaDependence, InitialFn};
use crate::stencil::{check_delta_dx, CflReport, SchemeCoefficients, StencilCache, StencilError, WEIGHT_THRESHOLD};
use crate::{Offset, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid scheme parameters: {0}")]
    InvalidParams(String),
    #[error("CFL condition violated at step {time_index}: worst ratio {:.6} > 1, use dt <= {}", report.worst_ratio, report.suggested_dt)]
    Cfl { time_index: usize, report: CflReport },
    #[error("implicit stage of step {time_index} did not converge in {iterations} iterations (last residual {:e})", history.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { time_index: usize, iterations: usize, history: Vec<f64> },
    #[error("local diffusion matrix is not diagonally dominant at {0}")]
    NotDiagonallyDominant(String),
    #[error(transparent)]
    Stencil(#[from] StencilError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// How the truncation radius `δ` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaRule {
    /// Use `SchemeParams::delta` as given.
    Manual,
    /// `δ = max(Δt^{1/σ}, Δx^{1/σ})` for `σ > 1`.
    OptimalThm33,
    /// `δ = Δx^{1/σ}` for `σ > 1`.
    OptimalThm34,
    /// `δ = Δx`.
    OptimalThm35,
}

impl DeltaRule {
    pub fn name(self) -> &'static str {
        match self {
            Self::Manual => "manual",
            Self::OptimalThm33 => "optimal_thm33",
            Self::OptimalThm34 => "optimal_thm34",
            Self::OptimalThm35 => "optimal_thm35",
        }
    }
}

impl core::str::FromStr for DeltaRule {
    type Err = SolverError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "manual" => Ok(Self::Manual),
            "optimal_thm33" => Ok(Self::OptimalThm33),
            "optimal_thm34" => Ok(Self::OptimalThm34),
            "optimal_thm35" => Ok(Self::OptimalThm35),
            other => Err(SolverError::InvalidParams(format!("unknown delta rule `{other}`"))),
        }
    }
}

/// Solver for the implicit stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImplicitSolver {
    /// Nonlinear Jacobi sweeps until the scheme residual is below tolerance.
    FixedPoint,
    /// Howard's algorithm with a banded direct solve; used for one-dimensional
    /// problems where one of the control sets is a singleton, otherwise
    /// falls back to [`ImplicitSolver::FixedPoint`].
    PolicyIteration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeParams {
    pub theta: f64,
    pub vartheta: f64,
    pub delta: f64,
    pub delta_rule: DeltaRule,
    pub fixed_point_tol: f64,
    pub fixed_point_max_iter: usize,
    pub solver: ImplicitSolver,
}

impl Default for SchemeParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            vartheta: 1.0,
            delta: 1.0,
            delta_rule: DeltaRule::OptimalThm35,
            fixed_point_tol: 1e-10,
            fixed_point_max_iter: 10_000,
            solver: ImplicitSolver::FixedPoint,
        }
    }
}

impl SchemeParams {
    pub fn explicit(delta: f64) -> Self {
        Self { theta: 0.0, vartheta: 0.0, delta, delta_rule: DeltaRule::Manual, ..Self::default() }
    }

    pub fn implicit(delta: f64) -> Self {
        Self { delta, delta_rule: DeltaRule::Manual, ..Self::default() }
    }

    pub fn with_rule(mut self, rule: DeltaRule) -> Self {
        self.delta_rule = rule;
        self
    }

    pub fn with_solver(mut self, solver: ImplicitSolver) -> Self {
        self.solver = solver;
        self
    }

    pub fn is_explicit(&self) -> bool {
        self.theta == 0.0 && self.vartheta == 0.0
    }

    /// Truncation radius for order `σ` on the given mesh; optimal rules are
    /// clamped to `[Δx, 1]`, a manual `δ < Δx` is rejected.
    pub fn resolve_delta(&self, sigma: f64, dx: f64, dt: f64) -> Result<f64, SolverError> {
        let delta = match self.delta_rule {
            DeltaRule::Manual => {
                check_delta_dx(self.delta, dx)?;
                return Ok(self.delta);
            }
            _ if sigma <= 1.0 => dx,
            DeltaRule::OptimalThm33 => powf(dt, 1.0 / sigma).max(powf(dx, 1.0 / sigma)),
            DeltaRule::OptimalThm34 => powf(dx, 1.0 / sigma),
            DeltaRule::OptimalThm35 => dx,
        };
        Ok(delta.max(dx).min(1.0))
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.theta) || !unit.contains(&self.vartheta) {
            return Err(SolverError::InvalidParams("theta and vartheta must lie in [0, 1]".into()));
        }
        if !(self.fixed_point_tol > 0.0) || self.fixed_point_max_iter == 0 {
            return Err(SolverError::InvalidParams("fixed-point tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Local second-order correction `L[U] = Σ_k w_k (U_{j+k} - U_j)` built
/// from `a_δ = ½ ∫_{|z|≤δ} η ηᵀ ν(dz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionCorrection {
    pub enabled: bool,
    dim: usize,
    pairs: usize,
    per_node: bool,
    a_delta: Vec<[f64; MAX_DIM * MAX_DIM]>,
    local: Vec<Arc<Vec<(Offset, f64)>>>,
}

impl DiffusionCorrection {
    pub fn disabled() -> Self {
        Self { enabled: false, dim: 0, pairs: 0, per_node: false, a_delta: Vec::new(), local: Vec::new() }
    }

    fn index(&self, node: usize, pair: usize) -> usize {
        if self.per_node {
            node * self.pairs + pair
        } else {
            pair
        }
    }

    /// `a_δ` (row-major `N × N`) at a node and control pair.
    pub fn a_delta(&self, node: usize, pair: usize) -> &[f64] {
        &self.a_delta[self.index(node, pair)][..self.dim * self.dim]
    }

    pub fn local_weights(&self, node: usize, pair: usize) -> &[(Offset, f64)] {
        &self.local[self.index(node, pair)]
    }
}

/// Monotone second-difference stencil for `tr(a D²φ)`: axis weights
/// `(a_ii - Σ_{j≠i}|a_ij|)/Δx²`, diagonal weights `|a_ij|/Δx²` along
/// `e_i ± e_j` with the sign of `a_ij`.
pub fn local_stencil(a: &[f64], n: usize, dx: f64) -> Vec<(Offset, f64)> {
    let h2 = dx * dx;
    let mut out = Vec::new();
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| abs(a[i * n + j])).sum();
        let w = (a[i * n + i] - off) / h2;
        if w >= WEIGHT_THRESHOLD {
            for s in [1, -1] {
                let mut o = [0; MAX_DIM];
                o[i] = s;
                out.push((o, w));
            }
        }
        for j in i + 1..n {
            let v = a[i * n + j];
            let w = abs(v) / h2;
            if w >= WEIGHT_THRESHOLD {
                let sj = if v > 0.0 { 1 } else { -1 };
                for s in [1, -1] {
                    let mut o = [0; MAX_DIM];
                    o[i] = s;
                    o[j] = s * sj;
                    out.push((o, w));
                }
            }
        }
    }
    out.sort_by(|x, y| x.0.cmp(&y.0));
    out
}

/// Computes `a_δ` by small-shell quadrature and the monotone local stencil.
/// Fails if `a_δ` is not diagonally dominant at some node.
pub fn assemble_diffusion_correction(problem: &ControlProblem, grid: &Grid, delta: f64) -> Result<DiffusionCorrection, SolverError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(StencilError::DeltaOutOfRange(delta).into());
    }
    let n = problem.space_dim();
    let nb = problem.controls_b();
    let pairs = problem.controls_a() * nb;
    let per_node = match problem.eta_dependence() {
        EtaDependence::Constant => false,
        EtaDependence::XOnly => true,
        EtaDependence::XtDependent => {
            return Err(SolverError::InvalidParams("the local correction needs a time-independent jump map".into()));
        }
    };
    let count = if per_node { grid.node_count() * pairs } else { pairs };
    let no_jumps = problem.has_no_jumps();
    let built = map_range(count, |k| -> Result<[f64; MAX_DIM * MAX_DIM], SolverError> {
        let (node, pair) = (k / pairs, k % pairs);
        let mut a = [0.0; MAX_DIM * MAX_DIM];
        if no_jumps {
            return Ok(a);
        }
        let mut x = [0.0; MAX_DIM];
        if per_node {
            grid.coords(node, &mut x);
        }
        let mut e = [0.0; MAX_DIM];
        let v = problem
            .measure()
            .small_shell_integral(delta, n * n, |z, out| {
                problem.jump(0.0, &x[..n], pair / nb, pair % nb, z, &mut e[..n]);
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = e[i] * e[j];
                    }
                }
            })
            .map_err(StencilError::from)?;
        for (dst, src) in a.iter_mut().zip(v.iter()) {
            *dst = 0.5 * src;
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| abs(a[i * n + j])).sum();
            if a[i * n + i] - off < -1e-12 * a[i * n + i].max(f64::MIN_POSITIVE) {
                return Err(SolverError::NotDiagonallyDominant(format!("x = {:?}, control pair {pair}", &x[..n])));
            }
        }
        Ok(a)
    });
    let a_delta = built.into_iter().collect::<Result<Vec<_>, _>>()?;
    let local = a_delta.iter().map(|a| Arc::new(local_stencil(&a[..n * n], n, grid.dx()))).collect();
    Ok(DiffusionCorrection { enabled: true, dim: n, pairs, per_node, a_delta, local })
}

/// Reference to a neighbour value inside the implicit stage.
#[derive(Clone, Copy, Debug)]
enum Link {
    Node(usize),
    Fixed(f64),
}

/// `Δt H_p(u) = constant + diag·u - Σ w·U_link` for one control pair.
#[derive(Clone, Debug, Default)]
struct PairTerms {
    constant: f64,
    diag: f64,
    links: Vec<(Link, f64)>,
}

impl PairTerms {
    fn value(&self, u: f64, field: &[f64]) -> f64 {
        self.constant + self.diag * u - self.coupling(field)
    }

    fn coupling(&self, field: &[f64]) -> f64 {
        let mut s = 0.0;
        for (l, w) in &self.links {
            s += w * match *l {
                Link::Node(i) => field[i],
                Link::Fixed(v) => v,
            };
        }
        s
    }
}

struct NodeSystem {
    prev: f64,
    pairs: Vec<PairTerms>,
}

/// Index of `min_a max_b v(a, b)`; ties go to the lowest index.
fn minmax_index(na: usize, nb: usize, v: impl Fn(usize) -> f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for a in 0..na {
        let mut inner = (a * nb, f64::NEG_INFINITY);
        for b in 0..nb {
            let x = v(a * nb + b);
            if x > inner.1 {
                inner = (a * nb + b, x);
            }
        }
        if inner.1 < best.1 {
            best = inner;
        }
    }
    best
}

impl NodeSystem {
    /// `G(u) = u - U^{n-1} + min max_p Δt H_p(u)` with neighbour couplings `s`.
    fn eval(&self, u: f64, s: &[f64], na: usize, nb: usize) -> (f64, f64, usize) {
        let (p, v) = minmax_index(na, nb, |p| self.pairs[p].constant + self.pairs[p].diag * u - s[p]);
        (u - self.prev + v, 1.0 + self.pairs[p].diag, p)
    }

    /// Exact root of the scalar node equation by safeguarded Newton.
    fn solve(&self, u0: f64, s: &[f64], na: usize, nb: usize) -> f64 {
        let (g0, slope0, _) = self.eval(u0, s, na, nb);
        if g0 == 0.0 {
            return u0;
        }
        // slope ≥ 1, so the root lies within |g0| of u0
        let (mut lo, mut hi) = if g0 > 0.0 { (u0 - g0, u0) } else { (u0, u0 - g0) };
        let mut u = u0 - g0 / slope0;
        for _ in 0..200 {
            if !(u > lo && u < hi) {
                u = 0.5 * (lo + hi);
            }
            let (g, slope, _) = self.eval(u, s, na, nb);
            if g == 0.0 || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                return u;
            }
            if g > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let next = u - g / slope;
            if next == u {
                return u;
            }
            u = next;
        }
        u
    }
}

/// Diagnostics of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
    /// Ratio of the last two residuals of the fixed-point iteration.
    pub contraction: Option<f64>,
}

/// Advances the scheme one step at a time, caching stencils.
pub struct Stepper<'a> {
    problem: &'a ControlProblem,
    grid: &'a Grid,
    params: SchemeParams,
    delta: f64,
    correction: DiffusionCorrection,
    prev_cache: StencilCache,
    curr_cache: StencilCache,
    u0: InitialFn,
    lu: Option<(BandMatrix, BandLu)>,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a ControlProblem, grid: &'a Grid, params: &SchemeParams, correction: &DiffusionCorrection) -> Result<Self, SolverError> {
        params.validate()?;
        if grid.dim() != problem.space_dim() {
            return Err(SolverError::InvalidParams("grid and problem dimensions differ".into()));
        }
        if correction.enabled && (params.theta != 1.0 || params.vartheta != 1.0) {
            return Err(SolverError::InvalidParams("the local correction is only defined for the fully implicit scheme".into()));
        }
        let delta = params.resolve_delta(problem.measure().sigma(), grid.dx(), grid.dt())?;
        let curr_cache = StencilCache::new(problem, grid, delta, grid.time(1))?;
        let prev_cache = if curr_cache.time_dependent() { StencilCache::new(problem, grid, delta, 0.0)? } else { curr_cache.clone() };
        Ok(Self { problem, grid, params: *params, delta, correction: correction.clone(), prev_cache, curr_cache, u0: problem.initial_fn(), lu: None })
    }

    /// The truncation radius in use.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    fn prepare(&mut self, n: usize) -> Result<(), SolverError> {
        if !self.curr_cache.time_dependent() {
            return Ok(());
        }
        let (tp, tc) = (self.grid.time(n - 1), self.grid.time(n));
        if self.curr_cache.time() == tp {
            core::mem::swap(&mut self.prev_cache, &mut self.curr_cache);
        }
        self.prev_cache.refresh(self.problem, self.grid, tp)?;
        self.curr_cache.refresh(self.problem, self.grid, tc)?;
        Ok(())
    }

    fn value_link(&self, node: usize, o: &Offset) -> Option<Link> {
        let mut idx = self.grid.index_of(node);
        for d in 0..self.grid.dim() {
            idx[d] += o[d];
        }
        match self.grid.locate(&idx) {
            Lookup::Node(i) if i == node => None,
            Lookup::Node(i) => Some(Link::Node(i)),
            Lookup::Outside(out) => {
                let mut x = [0.0; MAX_DIM];
                self.grid.coords_of(&out, &mut x);
                Some(Link::Fixed((self.u0)(&x[..self.grid.dim()])))
            }
        }
    }

    fn read(&self, slice: &[f64], node: usize, o: &Offset) -> f64 {
        match self.value_link(node, o) {
            None => slice[node],
            Some(Link::Node(i)) => slice[i],
            Some(Link::Fixed(v)) => v,
        }
    }

    /// Assembles the node equation of step `n`; also returns the worst explicit ratio.
    fn node_system(&self, prev: &[f64], node: usize, n: usize) -> (NodeSystem, f64) {
        let p = self.problem;
        let dim = self.grid.dim();
        let (tp, tc) = (self.grid.time(n - 1), self.grid.time(n));
        let dt = self.grid.dt();
        let mut x = [0.0; MAX_DIM];
        self.grid.coords(node, &mut x);
        let x = &x[..dim];
        let (th, vt) = (self.params.theta, self.params.vartheta);
        let corrected = self.correction.enabled;
        let nb = p.controls_b();
        let mut worst = 0.0f64;
        let mut pairs = Vec::with_capacity(p.controls_a() * nb);
        for a in 0..p.controls_a() {
            for b in 0..nb {
                let curr = self.curr_cache.weights(p, self.grid, node, a, b, tc);
                let c = p.discount(tc, x, a, b);
                let mut terms = PairTerms::default();
                let push = |terms: &mut PairTerms, o: &Offset, w: f64| {
                    if w == 0.0 {
                        return;
                    }
                    if let Some(l) = self.value_link(node, o) {
                        terms.links.push((l, w));
                        terms.diag += w;
                    }
                };
                if corrected {
                    terms.constant = -dt * p.source(tc, x, a, b);
                    for (o, w) in &curr.drift {
                        push(&mut terms, o, dt * w);
                    }
                    for (o, w) in curr.kappa() {
                        push(&mut terms, o, dt * w);
                    }
                    for (o, w) in self.correction.local_weights(node, a * nb + b) {
                        push(&mut terms, o, dt * w);
                    }
                    terms.diag += dt * c;
                    worst = worst.max(0.0);
                } else {
                    let old = self.prev_cache.weights(p, self.grid, node, a, b, tp);
                    let uj = prev[node];
                    let mut explicit = 0.0;
                    if th < 1.0 {
                        for (o, w) in &old.drift {
                            explicit += (1.0 - th) * w * (self.read(prev, node, o) - uj);
                        }
                    }
                    if vt < 1.0 {
                        for (o, w) in old.kappa() {
                            explicit += (1.0 - vt) * w * (self.read(prev, node, o) - uj);
                        }
                    }
                    terms.constant = dt * (-p.source(tp, x, a, b) + c * uj - explicit);
                    if th > 0.0 {
                        for (o, w) in &curr.drift {
                            push(&mut terms, o, dt * th * w);
                        }
                    }
                    if vt > 0.0 {
                        for (o, w) in curr.kappa() {
                            if *o != [0; MAX_DIM] {
                                push(&mut terms, o, dt * vt * w);
                            }
                        }
                    }
                    worst = worst.max(dt * ((1.0 - th) * old.drift_sum() + (1.0 - vt) * old.nonlocal_sum() + c));
                }
                pairs.push(terms);
            }
        }
        (NodeSystem { prev: prev[node], pairs }, worst)
    }

    /// Positive-form coefficients at `node`, pair `(a, b)`, step `n`.
    pub fn coefficients(&mut self, node: usize, a: usize, b: usize, n: usize) -> Result<SchemeCoefficients, SolverError> {
        self.prepare(n)?;
        let p = self.problem;
        let curr = self.curr_cache.weights(p, self.grid, node, a, b, self.grid.time(n));
        let old = self.prev_cache.weights(p, self.grid, node, a, b, self.grid.time(n - 1));
        let mut x = [0.0; MAX_DIM];
        self.grid.coords(node, &mut x);
        let c = p.discount(self.grid.time(n), &x[..self.grid.dim()], a, b);
        Ok(SchemeCoefficients::new(&curr, &old, c, self.grid.dt(), self.params.theta, self.params.vartheta))
    }

    /// Stencils of `node`, pair `(a, b)` at `t_n` and `t_{n-1}`.
    pub fn stencils(&mut self, node: usize, a: usize, b: usize, n: usize) -> Result<(crate::StencilWeights, crate::StencilWeights), SolverError> {
        self.prepare(n)?;
        let p = self.problem;
        Ok((self.curr_cache.weights(p, self.grid, node, a, b, self.grid.time(n)), self.prev_cache.weights(p, self.grid, node, a, b, self.grid.time(n - 1))))
    }

    /// `min_a max_b {…}` of the scheme at `node` with `curr` standing for
    /// `U^n` and `prev` for `U^{n-1}`.
    pub fn hamiltonian(&mut self, curr: &[f64], prev: &[f64], node: usize, n: usize) -> Result<f64, SolverError> {
        self.prepare(n)?;
        let (sys, _) = self.node_system(prev, node, n);
        let p = self.problem;
        let (_, v) = minmax_index(p.controls_a(), p.controls_b(), |k| sys.pairs[k].value(curr[node], curr));
        Ok(v / self.grid.dt())
    }

    /// Computes `U^n` from `U^{n-1}`.
    pub fn step(&mut self, prev: &[f64], n: usize) -> Result<(Vec<f64>, StepStats), SolverError> {
        if n == 0 || prev.len() != self.grid.node_count() {
            return Err(SolverError::InvalidParams("step needs n >= 1 and a full previous slice".into()));
        }
        self.prepare(n)?;
        let built = map_range(self.grid.node_count(), |j| self.node_system(prev, j, n));
        let worst = built.iter().fold(0.0f64, |m, (_, w)| m.max(*w));
        if worst > 1.0 + 1e-12 {
            let dt = self.grid.dt();
            return Err(SolverError::Cfl { time_index: n, report: CflReport { satisfied: false, worst_ratio: worst, suggested_dt: dt / worst } });
        }
        let systems: Vec<NodeSystem> = built.into_iter().map(|(s, _)| s).collect();
        let explicit = systems.iter().all(|s| s.pairs.iter().all(|p| p.links.is_empty()));
        let (na, nb) = (self.problem.controls_a(), self.problem.controls_b());
        if explicit {
            let next: Vec<f64> = map_range(systems.len(), |j| {
                let s = &systems[j];
                let (_, v) = minmax_index(na, nb, |p| s.pairs[p].constant);
                s.prev - v
            });
            return Ok((next, StepStats { iterations: 1, residual: 0.0, contraction: None }));
        }
        let use_policy = self.params.solver == ImplicitSolver::PolicyIteration && self.grid.dim() == 1 && (na == 1 || nb == 1);
        if use_policy {
            if let Some(out) = self.policy_iteration(&systems, prev, n)? {
                return Ok(out);
            }
        }
        self.fixed_point(&systems, prev.to_vec(), n, 0)
    }

    fn fixed_point(&self, systems: &[NodeSystem], start: Vec<f64>, n: usize, done: usize) -> Result<(Vec<f64>, StepStats), SolverError> {
        let (na, nb) = (self.problem.controls_a(), self.problem.controls_b());
        let tol = self.params.fixed_point_tol;
        let mut u = start;
        let mut history = Vec::new();
        for it in 0..self.params.fixed_point_max_iter {
            let updates = map_range(systems.len(), |j| {
                let s = &systems[j];
                let coupling: Vec<f64> = s.pairs.iter().map(|p| p.coupling(&u)).collect();
                let (g, _, _) = s.eval(u[j], &coupling, na, nb);
                (abs(g), s.solve(u[j], &coupling, na, nb))
            });
            let residual = updates.iter().fold(0.0f64, |m, (r, _)| m.max(*r));
            history.push(residual);
            if residual < tol {
                let k = history.len();
                let contraction = (k >= 3 && history[k - 2] > 0.0).then(|| history[k - 2] / history[k - 3]);
                log::debug!("step {n}: fixed point converged in {} iterations, residual {residual:e}", it + done);
                return Ok((u, StepStats { iterations: it + done, residual, contraction }));
            }
            u = updates.into_iter().map(|(_, v)| v).collect();
        }
        Err(SolverError::NoConvergence { time_index: n, iterations: self.params.fixed_point_max_iter, history })
    }

    /// Howard's algorithm for one-dimensional problems with a singleton
    /// control set. Returns `None` if the linear solve is not applicable.
    fn policy_iteration(&mut self, systems: &[NodeSystem], prev: &[f64], n: usize) -> Result<Option<(Vec<f64>, StepStats)>, SolverError> {
        let (na, nb) = (self.problem.controls_a(), self.problem.controls_b());
        let count = systems.len();
        let mut band = 0usize;
        for (j, s) in systems.iter().enumerate() {
            for p in &s.pairs {
                for (l, _) in &p.links {
                    if let Link::Node(i) = l {
                        band = band.max(i.abs_diff(j));
                    }
                }
            }
        }
        let select = |u: &[f64], j: usize| -> usize {
            let s = &systems[j];
            minmax_index(na, nb, |p| s.pairs[p].value(u[j], u)).0
        };
        let mut u = prev.to_vec();
        let mut policy: Vec<usize> = (0..count).map(|j| select(&u, j)).collect();
        for it in 1..=self.params.fixed_point_max_iter.min(200) {
            let mut a = BandMatrix::zeros(count, band, band);
            let mut rhs = vec![0.0; count];
            for (j, s) in systems.iter().enumerate() {
                let p = &s.pairs[policy[j]];
                a.add(j, j, 1.0 + p.diag);
                rhs[j] = s.prev - p.constant;
                for (l, w) in &p.links {
                    match *l {
                        Link::Node(i) => a.add(j, i, -w),
                        Link::Fixed(v) => rhs[j] += w * v,
                    }
                }
            }
            let reuse = matches!(&self.lu, Some((m, _)) if *m == a);
            if !reuse {
                match a.clone().factor() {
                    Some(lu) => self.lu = Some((a, lu)),
                    None => return Ok(None),
                }
            }
            self.lu.as_ref().expect("factorisation present").1.solve(&mut rhs);
            u = rhs;
            // switch only on strict improvement, which guarantees termination
            let next: Vec<usize> = (0..count)
                .map(|j| {
                    let s = &systems[j];
                    let cand = select(&u, j);
                    let cur = s.pairs[policy[j]].value(u[j], &u);
                    let new = s.pairs[cand].value(u[j], &u);
                    if abs(new - cur) <= 1e-14 * (1.0 + abs(cur)) {
                        policy[j]
                    } else {
                        cand
                    }
                })
                .collect();
            if next == policy {
                // polish with the exact residual check
                let out = self.fixed_point(systems, u, n, it)?;
                return Ok(Some(out));
            }
            policy = next;
        }
        Ok(None)
    }
}

/// Solves from `u₀` sampled on the grid.
pub fn solve(problem: &ControlProblem, grid: &Grid, params: &SchemeParams, correction: &DiffusionCorrection) -> Result<SolutionField, SolverError> {
    let initial = grid.sample(&*problem.initial_fn());
    solve_from(problem, grid, params, correction, 0, initial)
}

/// Solves from `slice` at time index `start` (initial data or a checkpoint)
/// up to the horizon. Levels before `start` are left empty in the field.
pub fn solve_from(
    problem: &ControlProblem,
    grid: &Grid,
    params: &SchemeParams,
    correction: &DiffusionCorrection,
    start: usize,
    slice: Vec<f64>,
) -> Result<SolutionField, SolverError> {
    let mut stepper = Stepper::new(problem, grid, params, correction)?;
    let mut field = if start == 0 {
        SolutionField::new(grid.clone(), problem.name(), slice)?
    } else {
        SolutionField::resumed(grid.clone(), problem.name().into(), start, slice)?
    };
    for n in start + 1..=grid.steps() {
        let (next, stats) = stepper.step(field.last(), n)?;
        log::debug!("step {n}/{}: {} iterations, residual {:e}", grid.steps(), stats.iterations, stats.residual);
        field.push(next)?;
    }
    log::info!("solved `{}` with {} steps, delta = {}", problem.name(), grid.steps(), stepper.delta());
    Ok(field)
}
