//! Control problem data `f, c, b, η, u₀` over finite control sets, the
//! canonical test problems, and sampling-based assumption checks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::levy::{LevyMeasure, MeasureError};
use crate::math::{abs, exp, norm, powf, sphere_area};
use crate::sampling::Sampler;
use crate::MAX_DIM;

/// Scalar coefficient `(t, x, a, b) ↦ value`.
pub type CoefFn = Arc<dyn Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync>;
/// Vector coefficient `(t, x, a, b, out)`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], usize, usize, &mut [f64]) + Send + Sync>;
/// Jump map `(t, x, a, b, z, out)`.
pub type EtaFn = Arc<dyn Fn(f64, &[f64], usize, usize, &[f64], &mut [f64]) + Send + Sync>;
/// Initial datum `x ↦ u₀(x)`.
pub type InitialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("unknown canonical problem `{0}`")]
    UnknownProblem(String),
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// How the jump map depends on `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EtaDependence {
    XtDependent,
    XOnly,
    Constant,
}

impl EtaDependence {
    pub fn name(self) -> &'static str {
        match self {
            Self::XtDependent => "xt_dependent",
            Self::XOnly => "x_only",
            Self::Constant => "constant",
        }
    }
}

impl core::str::FromStr for EtaDependence {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xt_dependent" => Ok(Self::XtDependent),
            "x_only" => Ok(Self::XOnly),
            "constant" => Ok(Self::Constant),
            other => Err(ProblemError::InvalidParameter(format!("unknown eta dependence `{other}`"))),
        }
    }
}

/// `u_t + min_a max_b { -f + c u - b·∇u - I[u] } = 0`, `u(0) = u₀`, with
/// `I[u](x) = ∫ (u(x + η(z)) - u(x) - η(z)·∇u(x)) ν(dz)`.
#[derive(Clone)]
pub struct ControlProblem {
    name: String,
    space_dim: usize,
    controls_a: usize,
    controls_b: usize,
    f: CoefFn,
    c: CoefFn,
    b: DriftFn,
    eta: EtaFn,
    eta_dependence: EtaDependence,
    eta_zero: bool,
    u0: InitialFn,
    measure: LevyMeasure,
    horizon: f64,
    lipschitz_bound: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("space_dim", &self.space_dim)
            .field("controls", &(self.controls_a, self.controls_b))
            .field("eta_dependence", &self.eta_dependence)
            .field("measure", &self.measure)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ControlProblem {
    /// Problem with a single control pair and all coefficients zero,
    /// `η ≡ 0` and `u₀ ≡ 0`; fill in with the `with_*` methods.
    pub fn new(name: impl Into<String>, space_dim: usize, measure: LevyMeasure, horizon: f64) -> Result<Self, ProblemError> {
        if !(1..=MAX_DIM).contains(&space_dim) {
            return Err(ProblemError::InvalidParameter(format!("space dimension {space_dim} outside 1..={MAX_DIM}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ProblemError::InvalidParameter("horizon must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            space_dim,
            controls_a: 1,
            controls_b: 1,
            f: Arc::new(|_, _, _, _| 0.0),
            c: Arc::new(|_, _, _, _| 0.0),
            b: Arc::new(|_, _, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            eta: Arc::new(|_, _, _, _, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0)),
            eta_dependence: EtaDependence::Constant,
            eta_zero: true,
            u0: Arc::new(|_| 0.0),
            measure,
            horizon,
            lipschitz_bound: 10.0,
        })
    }

    pub fn with_controls(mut self, a: usize, b: usize) -> Result<Self, ProblemError> {
        if a == 0 || b == 0 {
            return Err(ProblemError::InvalidParameter("control sets must be nonempty".into()));
        }
        self.controls_a = a;
        self.controls_b = b;
        Ok(self)
    }
    pub fn with_source(mut self, f: CoefFn) -> Self {
        self.f = f;
        self
    }
    pub fn with_discount(mut self, c: CoefFn) -> Self {
        self.c = c;
        self
    }
    pub fn with_drift(mut self, b: DriftFn) -> Self {
        self.b = b;
        self
    }
    /// Sets the jump map and declares how it depends on `(t, x)`.
    pub fn with_jump_map(mut self, eta: EtaFn, dependence: EtaDependence) -> Self {
        self.eta = eta;
        self.eta_dependence = dependence;
        self.eta_zero = false;
        self
    }
    pub fn with_initial(mut self, u0: InitialFn) -> Self {
        self.u0 = u0;
        self
    }
    pub fn with_measure(mut self, measure: LevyMeasure) -> Self {
        self.measure = measure;
        self
    }
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self, ProblemError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ProblemError::InvalidParameter("horizon must be positive".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }
    /// Declared constant `K` of the Lipschitz assumptions.
    pub fn with_lipschitz_bound(mut self, k: f64) -> Self {
        self.lipschitz_bound = k;
        self
    }
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn space_dim(&self) -> usize {
        self.space_dim
    }
    pub fn controls_a(&self) -> usize {
        self.controls_a
    }
    pub fn controls_b(&self) -> usize {
        self.controls_b
    }
    pub fn eta_dependence(&self) -> EtaDependence {
        self.eta_dependence
    }
    pub fn measure(&self) -> &LevyMeasure {
        &self.measure
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }
    /// True when there is no nonlocal term at all.
    pub fn has_no_jumps(&self) -> bool {
        self.eta_zero || self.measure.is_null()
    }

    pub fn source(&self, t: f64, x: &[f64], a: usize, b: usize) -> f64 {
        (self.f)(t, x, a, b)
    }
    pub fn discount(&self, t: f64, x: &[f64], a: usize, b: usize) -> f64 {
        (self.c)(t, x, a, b)
    }
    pub fn drift(&self, t: f64, x: &[f64], a: usize, b: usize, out: &mut [f64]) {
        (self.b)(t, x, a, b, out)
    }
    pub fn jump(&self, t: f64, x: &[f64], a: usize, b: usize, z: &[f64], out: &mut [f64]) {
        if self.eta_zero {
            out.iter_mut().for_each(|v| *v = 0.0);
        } else {
            (self.eta)(t, x, a, b, z, out)
        }
    }
    pub fn initial(&self, x: &[f64]) -> f64 {
        (self.u0)(x)
    }
    pub fn initial_fn(&self) -> InitialFn {
        self.u0.clone()
    }
}

/// Parameter overrides for [`canonical_problem`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProblemOverrides {
    pub sigma: Option<f64>,
    pub density_constant: Option<f64>,
    /// Switches the measure to the tempered kind with this rate.
    pub tempering_rate: Option<f64>,
    pub drift: Option<f64>,
    pub horizon: Option<f64>,
    pub lipschitz_bound: Option<f64>,
}

/// Names accepted by [`canonical_problem`].
pub const CANONICAL_PROBLEMS: [&str; 4] = ["linear_advection", "fractional_linear", "two_player_nonconvex", "smooth_u0_variant"];

fn hat(x: &[f64]) -> f64 {
    (1.0 - norm(x)).max(0.0)
}

/// One-dimensional canonical test problems.
pub fn canonical_problem(name: &str, overrides: &ProblemOverrides) -> Result<ControlProblem, ProblemError> {
    let sigma = overrides.sigma.unwrap_or(0.5);
    let scale = overrides.density_constant.unwrap_or(1.0);
    let horizon = overrides.horizon.unwrap_or(1.0);
    let stable = || -> Result<LevyMeasure, MeasureError> {
        match overrides.tempering_rate {
            Some(rate) => LevyMeasure::tempered_stable(1, sigma, scale, rate),
            None => LevyMeasure::truncated_stable(1, sigma, scale),
        }
    };
    let identity_jump: EtaFn = Arc::new(|_, _, _, _, z: &[f64], out: &mut [f64]| out[0] = z[0]);
    let problem = match name {
        "linear_advection" => {
            let speed = overrides.drift.unwrap_or(1.0);
            ControlProblem::new(name, 1, LevyMeasure::zero(1)?, horizon)?
                .with_drift(Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = speed))
                .with_initial(Arc::new(hat))
        }
        "fractional_linear" | "smooth_u0_variant" => {
            let speed = overrides.drift.unwrap_or(0.0);
            let p = ControlProblem::new(name, 1, stable()?, horizon)?
                .with_jump_map(identity_jump, EtaDependence::Constant)
                .with_drift(Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = speed));
            if name == "fractional_linear" {
                p.with_initial(Arc::new(hat))
            } else {
                p.with_initial(Arc::new(|x: &[f64]| exp(-x[0] * x[0])))
            }
        }
        "two_player_nonconvex" => {
            let speed = overrides.drift.unwrap_or(1.0);
            let sign = |i: usize| if i == 0 { -1.0 } else { 1.0 };
            ControlProblem::new(name, 1, stable()?, horizon)?
                .with_controls(2, 2)?
                .with_drift(Arc::new(move |_, _, a, b, out: &mut [f64]| out[0] = speed * sign(a) * sign(b)))
                .with_source(Arc::new(move |_, _, a, b| 0.1 * (sign(a) + 2.0 * sign(b))))
                .with_discount(Arc::new(move |_, _, a, _| 0.5 + 0.25 * sign(a)))
                .with_jump_map(Arc::new(|_, _, _, _, z: &[f64], out: &mut [f64]| out[0] = 0.5 * z[0]), EtaDependence::Constant)
                .with_initial(Arc::new(hat))
        }
        other => return Err(ProblemError::UnknownProblem(other.to_string())),
    };
    Ok(problem.with_lipschitz_bound(overrides.lipschitz_bound.unwrap_or(10.0)))
}

/// Outcome of one assumption check.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Worst sampled quantity (quotient, bound ratio or value).
    pub worst: f64,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Point {
    t: f64,
    x: [f64; MAX_DIM],
}

fn describe(p: &Point, n: usize, a: usize, b: usize) -> String {
    format!("t={}, x={:?}, a={a}, b={b}", p.t, &p.x[..n])
}

/// Sampling-based check of the structural assumptions on `[0, T] × [-L, L]^N`.
/// Deterministic for a fixed `seed`; a pass is evidence, not proof.
pub fn validate_assumptions(problem: &ControlProblem, sample_count: usize, box_radius: f64, seed: u64) -> ValidationReport {
    let n = problem.space_dim;
    let m = problem.measure.jump_dim();
    let k = problem.lipschitz_bound;
    let count = sample_count.max(2);
    let mut rng = Sampler::new(seed);
    let points: Vec<Point> = (0..count)
        .map(|_| {
            let mut x = [0.0; MAX_DIM];
            for v in x.iter_mut().take(n) {
                *v = rng.uniform(-box_radius, box_radius);
            }
            Point { t: rng.uniform(0.0, problem.horizon), x }
        })
        .collect();
    let pair = |i: usize| (i, (i + 1) % count);
    let dist = |p: &Point, q: &Point| {
        let dx: f64 = (0..n).map(|d| (p.x[d] - q.x[d]) * (p.x[d] - q.x[d])).sum::<f64>();
        libm::sqrt(dx) + abs(p.t - q.t)
    };
    let controls: Vec<(usize, usize)> = (0..problem.controls_a).flat_map(|a| (0..problem.controls_b).map(move |b| (a, b))).collect();
    let mut checks = Vec::new();

    // A1: c ≥ 0
    let mut worst = f64::INFINITY;
    let mut witness = None;
    for p in &points {
        for &(a, b) in &controls {
            let c = problem.discount(p.t, &p.x[..n], a, b);
            if c < worst {
                worst = c;
                if c < 0.0 {
                    witness = Some(describe(p, n, a, b));
                }
            }
        }
    }
    checks.push(AssumptionCheck { name: "A1", passed: witness.is_none(), worst, witness });

    // A2: ‖u₀‖₁ + ‖f‖₁ + ‖c‖₁ + ‖b‖₁ ≤ K (sup plus Lipschitz quotient)
    let mut u0_norm = (0.0f64, 0.0f64);
    let mut coef_norm = vec![[(0.0f64, 0.0f64); 3]; controls.len()];
    let mut bp = [0.0; MAX_DIM];
    let mut bq = [0.0; MAX_DIM];
    for i in 0..count {
        let (i, j) = pair(i);
        let (p, q) = (&points[i], &points[j]);
        let d = dist(p, q);
        let up = problem.initial(&p.x[..n]);
        let uq = problem.initial(&q.x[..n]);
        let dx: f64 = libm::sqrt((0..n).map(|e| (p.x[e] - q.x[e]) * (p.x[e] - q.x[e])).sum::<f64>());
        u0_norm.0 = u0_norm.0.max(abs(up));
        if dx > 0.0 {
            u0_norm.1 = u0_norm.1.max(abs(up - uq) / dx);
        }
        for (ci, &(a, b)) in controls.iter().enumerate() {
            let vals = [
                (problem.source(p.t, &p.x[..n], a, b), problem.source(q.t, &q.x[..n], a, b)),
                (problem.discount(p.t, &p.x[..n], a, b), problem.discount(q.t, &q.x[..n], a, b)),
            ];
            for (slot, (vp, vq)) in vals.iter().enumerate() {
                let e = &mut coef_norm[ci][slot];
                e.0 = e.0.max(abs(*vp));
                if d > 0.0 {
                    e.1 = e.1.max(abs(vp - vq) / d);
                }
            }
            problem.drift(p.t, &p.x[..n], a, b, &mut bp[..n]);
            problem.drift(q.t, &q.x[..n], a, b, &mut bq[..n]);
            let e = &mut coef_norm[ci][2];
            e.0 = e.0.max(norm(&bp[..n]));
            if d > 0.0 {
                let diff: Vec<f64> = (0..n).map(|e| bp[e] - bq[e]).collect();
                e.1 = e.1.max(norm(&diff) / d);
            }
        }
    }
    let coef_total = coef_norm.iter().map(|c| c.iter().map(|(s, l)| s + l).sum::<f64>()).fold(0.0, f64::max);
    let total = u0_norm.0 + u0_norm.1 + coef_total;
    let finite = total.is_finite();
    checks.push(AssumptionCheck {
        name: "A2",
        passed: finite && total <= k,
        worst: total,
        witness: (!finite || total > k).then(|| format!("sampled norm sum {total} exceeds K = {k}")),
    });

    // A3: |η| ≤ ρ, Lipschitz in (t, x) with constant ρ(z), envelope shape
    let radii = log_radii(&problem.measure);
    let mut dirs: Vec<[f64; MAX_DIM]> = Vec::new();
    for r in &radii {
        for _ in 0..2 {
            let mut z = [0.0; MAX_DIM];
            if m == 1 {
                z[0] = if rng.unit() < 0.5 { -r } else { *r };
            } else {
                let mut v = [0.0; MAX_DIM];
                for c in v.iter_mut().take(m) {
                    *c = rng.uniform(-1.0, 1.0);
                }
                let l = norm(&v[..m]).max(1e-300);
                for c in 0..m {
                    z[c] = r * v[c] / l;
                }
            }
            dirs.push(z);
        }
    }
    let mut worst3 = 0.0f64;
    let mut witness3 = None;
    let mut ep = [0.0; MAX_DIM];
    let mut eq = [0.0; MAX_DIM];
    let mut dep_ok = true;
    let mut dep_witness = None;
    let stride = (count / 16).max(1);
    for i in (0..count).step_by(stride) {
        let (i, j) = pair(i);
        let (p, q) = (&points[i], &points[j]);
        let d = dist(p, q);
        for &(a, b) in &controls {
            for z in &dirs {
                let z = &z[..m];
                let rho = problem.measure.rho(z);
                problem.jump(p.t, &p.x[..n], a, b, z, &mut ep[..n]);
                problem.jump(q.t, &q.x[..n], a, b, z, &mut eq[..n]);
                let size = norm(&ep[..n]);
                let diff: Vec<f64> = (0..n).map(|e| ep[e] - eq[e]).collect();
                let lip = if d > 0.0 { norm(&diff) / d } else { 0.0 };
                let ratio = if rho > 0.0 {
                    (size / rho).max(lip / rho)
                } else if size > 0.0 || lip > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                if ratio > worst3 {
                    worst3 = ratio;
                    if ratio > 1.0 + 1e-12 {
                        witness3 = Some(format!("{}, |z|={}", describe(p, n, a, b), norm(z)));
                    }
                }
                // declared dependence
                let mut other = [0.0; MAX_DIM];
                let (s, y) = match problem.eta_dependence {
                    EtaDependence::Constant => (q.t, q.x),
                    EtaDependence::XOnly => (q.t, p.x),
                    EtaDependence::XtDependent => continue,
                };
                problem.jump(s, &y[..n], a, b, z, &mut other[..n]);
                if other[..n] != ep[..n] && dep_ok {
                    dep_ok = false;
                    dep_witness = Some(format!("{} vs t={s}, x={:?}", describe(p, n, a, b), &y[..n]));
                }
            }
        }
    }
    // envelope shape: ρ ≤ K|z| inside the unit ball, 1 ≤ ρ ≤ ρ² outside
    for z in &dirs {
        let z = &z[..m];
        let r = norm(z);
        let rho = problem.measure.rho(z);
        let bad = if r < 1.0 { rho > k * r } else { !(1.0 <= rho && rho <= rho * rho) };
        if bad && witness3.is_none() {
            witness3 = Some(format!("envelope shape fails at |z|={r}, rho={rho}"));
        }
    }
    checks.push(AssumptionCheck { name: "A3", passed: witness3.is_none(), worst: worst3, witness: witness3 });

    // A4: finite second moment near zero and finite ρ² moment of the tail
    let near = problem.measure.small_jump_second_moment(1.0);
    let far = problem.measure.shell_integral(1.0, 1, |z, out| {
        let r = problem.measure.rho(z);
        out[0] = r * r;
    });
    let (passed4, worst4, witness4) = match (near, far) {
        (Ok(a), Ok(b)) if a.is_finite() && b[0].is_finite() => (true, a + b[0], None),
        (a, b) => (false, f64::INFINITY, Some(format!("moment integrals: {a:?}, {b:?}"))),
    };
    checks.push(AssumptionCheck { name: "A4", passed: passed4, worst: worst4, witness: witness4 });

    // A5: k(z) ≤ C / |z|^{M+σ} on |z| < 1
    let c5 = problem.measure.density_constant();
    let exponent = m as f64 + problem.measure.sigma();
    let mut worst5 = 0.0f64;
    let mut witness5 = None;
    for z in &dirs {
        let z = &z[..m];
        let r = norm(z);
        if r >= 1.0 || r == 0.0 {
            continue;
        }
        let ratio = problem.measure.density(z) * powf(r, exponent) / c5;
        if ratio > worst5 {
            worst5 = ratio;
            if ratio > 1.0 + 1e-12 {
                witness5 = Some(format!("density bound fails at |z|={r}"));
            }
        }
    }
    checks.push(AssumptionCheck { name: "A5", passed: witness5.is_none(), worst: worst5, witness: witness5 });

    checks.push(AssumptionCheck { name: "eta_dependence", passed: dep_ok, worst: if dep_ok { 0.0 } else { 1.0 }, witness: dep_witness });
    ValidationReport { checks }
}

fn log_radii(measure: &LevyMeasure) -> Vec<f64> {
    let top = measure.support_radius().max(1.0);
    let lo: f64 = -4.0;
    let hi = libm::log10(top);
    let n = 24;
    (0..n).map(|i| libm::pow(10.0, lo + (hi - lo) * (i as f64 + 0.5) / n as f64)).collect()
}

/// `K(u₀)`, finite or the explicit infinity marker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KEstimate {
    Finite(f64),
    Infinite,
}

impl KEstimate {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }
    pub fn value(&self) -> f64 {
        match self {
            Self::Finite(v) => *v,
            Self::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KMode {
    /// `sup |I[u₀]|` over the sample points and control pairs.
    Direct,
    /// Right-hand side of the derivative bound on `|I[u₀]|` at a given `ε`.
    LemmaBound,
}

/// Radius below which the jump integrand is replaced by its second-order Taylor term.
pub const TAYLOR_RADIUS: f64 = 1e-4;

/// `I[φ](x)` for a smooth `φ` with known gradient and Hessian at `x`
/// (Hessian row-major `N × N`): Taylor term on `|z| ≤ r`, shell quadrature
/// of the exact integrand beyond.
#[allow(clippy::too_many_arguments)]
pub fn jump_operator<E>(
    measure: &LevyMeasure,
    eta: E,
    phi: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    grad: &[f64],
    hess: &[f64],
    split_radius: f64,
) -> Result<f64, MeasureError>
where
    E: Fn(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut e = [0.0; MAX_DIM];
    let mut y = [0.0; MAX_DIM];
    let inner = measure.small_shell_integral(split_radius, 1, |z, out| {
        eta(z, &mut e[..n]);
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += hess[i * n + j] * e[i] * e[j];
            }
        }
        out[0] = 0.5 * q;
    })?[0];
    let phi0 = phi(x);
    let outer = measure.shell_integral(split_radius, 1, |z, out| {
        eta(z, &mut e[..n]);
        let mut lin = 0.0;
        for i in 0..n {
            y[i] = x[i] + e[i];
            lin += e[i] * grad[i];
        }
        out[0] = phi(&y[..n]) - phi0 - lin;
    })?[0];
    Ok(inner + outer)
}

struct Derivatives {
    grad: [f64; MAX_DIM],
    hess: [f64; MAX_DIM * MAX_DIM],
    kink: bool,
}

/// Central-difference derivatives; a kink is flagged when the second
/// difference grows under step refinement.
fn derivatives(u: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Derivatives {
    let n = x.len();
    let h = 1e-4;
    let mut d = Derivatives { grad: [0.0; MAX_DIM], hess: [0.0; MAX_DIM * MAX_DIM], kink: false };
    let mut p = [0.0; MAX_DIM];
    let mut eval = |shift: &[(usize, f64)]| {
        p[..n].copy_from_slice(x);
        for &(i, s) in shift {
            p[i] += s;
        }
        u(&p[..n])
    };
    let u0 = eval(&[]);
    for i in 0..n {
        let (up, um) = (eval(&[(i, h)]), eval(&[(i, -h)]));
        d.grad[i] = (up - um) / (2.0 * h);
        let coarse = (up - 2.0 * u0 + um) / (h * h);
        let q = 0.25 * h;
        let fine = (eval(&[(i, q)]) - 2.0 * u0 + eval(&[(i, -q)])) / (q * q);
        if abs(fine) > 2.0 * abs(coarse) + 1e3 {
            d.kink = true;
        }
        d.hess[i * n + i] = coarse;
        for j in 0..i {
            let v = (eval(&[(i, h), (j, h)]) - eval(&[(i, h), (j, -h)]) - eval(&[(i, -h), (j, h)]) + eval(&[(i, -h), (j, -h)])) / (4.0 * h * h);
            d.hess[i * n + j] = v;
            d.hess[j * n + i] = v;
        }
    }
    if !(d.grad[..n].iter().chain(d.hess[..n * n].iter()).all(|v| v.is_finite())) {
        d.kink = true;
    }
    d
}

/// Lattice of about `count` points in `[-L, L]^N`, symmetric and containing the origin.
fn lattice(n: usize, box_radius: f64, count: usize) -> Vec<[f64; MAX_DIM]> {
    let per_axis = {
        let mut k = libm::pow(count.max(1) as f64, 1.0 / n as f64) as usize;
        if k % 2 == 0 {
            k += 1;
        }
        k.max(1)
    };
    let half = (per_axis / 2) as i64;
    let step = if half > 0 { box_radius / half as f64 } else { 0.0 };
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut f| {
            let mut x = [0.0; MAX_DIM];
            for v in x.iter_mut().take(n) {
                *v = ((f % per_axis) as i64 - half) as f64 * step;
                f /= per_axis;
            }
            x
        })
        .collect()
}

/// Estimates `K(u₀) = sup_{a,b} ‖I^{a,b}[u₀]‖₀` over a sample lattice of
/// `[-L, L]^N` at `t = 0`, or the derivative bound
/// `C(ε^{2-σ}‖D²u₀‖ + (1 + ε^{1-σ})‖Du₀‖)` (`σ > 1`),
/// `C(ε‖D²u₀‖ + (1 + |ln ε|)‖Du₀‖)` (`σ = 1`), `C‖Du₀‖` (`σ < 1`), with
/// `C = density constant · |S^{M-1}| / 2` and the Frobenius norm for `D²`.
pub fn k_u0_estimate(problem: &ControlProblem, mode: KMode, epsilon: f64, box_radius: f64, sample_count: usize) -> Result<KEstimate, MeasureError> {
    let n = problem.space_dim;
    let sigma = problem.measure.sigma();
    let u0 = problem.initial_fn();
    let pts = lattice(n, box_radius, sample_count);
    if problem.has_no_jumps() {
        return Ok(KEstimate::Finite(0.0));
    }
    match mode {
        KMode::LemmaBound => {
            let (mut d1, mut d2) = (0.0f64, 0.0f64);
            for x in &pts {
                let d = derivatives(&*u0, &x[..n]);
                if d.kink {
                    d2 = f64::INFINITY;
                } else {
                    d2 = d2.max(norm(&d.hess[..n * n]));
                }
                d1 = d1.max(norm(&d.grad[..n]));
            }
            let c = problem.measure.density_constant() * sphere_area(problem.measure.jump_dim()) / 2.0;
            let value = if sigma > 1.0 {
                c * (powf(epsilon, 2.0 - sigma) * d2 + (1.0 + powf(epsilon, 1.0 - sigma)) * d1)
            } else if sigma == 1.0 {
                c * (epsilon * d2 + (1.0 + abs(libm::log(epsilon))) * d1)
            } else {
                c * d1
            };
            Ok(if value.is_finite() { KEstimate::Finite(value) } else { KEstimate::Infinite })
        }
        KMode::Direct => {
            let mut sup = 0.0f64;
            for x in &pts {
                let x = &x[..n];
                let d = derivatives(&*u0, x);
                if d.kink && sigma >= 1.0 {
                    return Ok(KEstimate::Infinite);
                }
                for a in 0..problem.controls_a {
                    for b in 0..problem.controls_b {
                        let eta = |z: &[f64], out: &mut [f64]| problem.jump(0.0, x, a, b, z, out);
                        let v = if d.kink {
                            // integrable first-order singularity: integrate the exact integrand
                            let mut e = [0.0; MAX_DIM];
                            let mut y = [0.0; MAX_DIM];
                            let base = u0(x);
                            problem.measure.shell_integral(1e-12, 1, |z, out| {
                                eta(z, &mut e[..n]);
                                let mut lin = 0.0;
                                for i in 0..n {
                                    y[i] = x[i] + e[i];
                                    lin += e[i] * d.grad[i];
                                }
                                out[0] = u0(&y[..n]) - base - lin;
                            })?[0]
                        } else {
                            jump_operator(&problem.measure, eta, &*u0, x, &d.grad[..n], &d.hess[..n * n], TAYLOR_RADIUS)?
                        };
                        if !v.is_finite() {
                            return Ok(KEstimate::Infinite);
                        }
                        sup = sup.max(abs(v));
                    }
                }
            }
            Ok(KEstimate::Finite(sup))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constant_problem() -> ControlProblem {
        ControlProblem::new("const", 1, LevyMeasure::truncated_stable(1, 0.5, 1.0).unwrap(), 1.0)
            .unwrap()
            .with_source(Arc::new(|_, _, _, _| 0.3))
            .with_discount(Arc::new(|_, _, _, _| 1.0))
            .with_drift(Arc::new(|_, _, _, _, out: &mut [f64]| out[0] = 2.0))
            .with_jump_map(Arc::new(|_, _, _, _, z: &[f64], out: &mut [f64]| out[0] = z[0]), EtaDependence::Constant)
            .with_initial(Arc::new(|_| 1.0))
    }

    #[test]
    fn constant_problem_passes_all_checks() {
        let r = validate_assumptions(&constant_problem(), 200, 4.0, 1);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn negative_discount_fails_a1_with_witness() {
        let p = constant_problem().with_discount(Arc::new(|_, _, _, _| -1.0));
        let r = validate_assumptions(&p, 50, 4.0, 1);
        let a1 = r.get("A1").unwrap();
        assert!(!a1.passed);
        assert_eq!(a1.worst, -1.0);
        assert!(a1.witness.is_some());
    }

    #[test]
    fn unbounded_jump_map_fails_a3() {
        let p = constant_problem()
            .with_jump_map(Arc::new(|_, x: &[f64], _, _, z: &[f64], out: &mut [f64]| out[0] = z[0] * (1.0 + x[0].abs())), EtaDependence::XOnly);
        let r = validate_assumptions(&p, 100, 4.0, 3);
        assert!(!r.get("A3").unwrap().passed);
        assert!(r.get("A1").unwrap().passed);
    }

    #[test]
    fn mislabelled_dependence_is_detected() {
        let p = constant_problem()
            .with_jump_map(Arc::new(|_, x: &[f64], _, _, z: &[f64], out: &mut [f64]| out[0] = z[0] * libm::cos(x[0]) * 0.5), EtaDependence::Constant);
        let r = validate_assumptions(&p, 100, 4.0, 3);
        assert!(!r.get("eta_dependence").unwrap().passed);
    }

    #[test]
    fn canonical_problems_validate() {
        for name in CANONICAL_PROBLEMS {
            let p = canonical_problem(name, &ProblemOverrides::default()).unwrap();
            let r = validate_assumptions(&p, 100, 4.0, 11);
            assert!(r.all_passed(), "{name}: {r:?}");
        }
        assert!(matches!(canonical_problem("nope", &ProblemOverrides::default()), Err(ProblemError::UnknownProblem(_))));
        let adv = canonical_problem("linear_advection", &ProblemOverrides::default()).unwrap();
        assert!(adv.has_no_jumps());
        assert_eq!(adv.measure().truncated_mass(0.01).unwrap(), 0.0);
    }

    #[test]
    fn two_player_table_is_not_a_saddle() {
        let p = canonical_problem("two_player_nonconvex", &ProblemOverrides::default()).unwrap();
        // frozen Hamiltonian with u = 0, ∇u = 1 and no jump contribution
        let h = |a: usize, b: usize| {
            let mut drift = [0.0];
            p.drift(0.0, &[0.0], a, b, &mut drift);
            -p.source(0.0, &[0.0], a, b) - drift[0]
        };
        let minmax = (0..2).map(|a| (0..2).map(|b| h(a, b)).fold(f64::MIN, f64::max)).fold(f64::MAX, f64::min);
        let maxmin = (0..2).map(|b| (0..2).map(|a| h(a, b)).fold(f64::MAX, f64::min)).fold(f64::MIN, f64::max);
        assert_relative_eq!(minmax, 0.9, epsilon = 1e-12);
        assert_relative_eq!(maxmin, -0.7, epsilon = 1e-12);
    }

    #[test]
    fn constant_jump_map_is_bitwise_invariant() {
        let p = canonical_problem("fractional_linear", &ProblemOverrides::default()).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        p.jump(0.1, &[0.3], 0, 0, &[0.123], &mut a);
        p.jump(0.9, &[-2.5], 0, 0, &[0.123], &mut b);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn k_estimate_examples() {
        let flat = constant_problem();
        assert_eq!(k_u0_estimate(&flat, KMode::Direct, 0.5, 3.0, 21).unwrap(), KEstimate::Finite(0.0));

        let o = ProblemOverrides { sigma: Some(1.5), ..Default::default() };
        let kinked = canonical_problem("fractional_linear", &o).unwrap();
        assert_eq!(k_u0_estimate(&kinked, KMode::Direct, 0.5, 3.0, 61).unwrap(), KEstimate::Infinite);

        let smooth = canonical_problem("smooth_u0_variant", &o).unwrap();
        let bound = k_u0_estimate(&smooth, KMode::LemmaBound, 0.5, 3.0, 2001).unwrap().value();
        let d1 = (2.0 / core::f64::consts::E).sqrt();
        let expected = 0.5f64.powf(0.5) * 2.0 + (1.0 + 0.5f64.powf(-0.5)) * d1;
        assert_relative_eq!(bound, expected, max_relative = 1e-4);

        let low = ProblemOverrides { sigma: Some(0.5), ..Default::default() };
        let lip = canonical_problem("fractional_linear", &low).unwrap();
        assert!(k_u0_estimate(&lip, KMode::Direct, 0.5, 3.0, 61).unwrap().is_finite());
    }

    #[test]
    fn jump_operator_matches_cosine_series() {
        // I[cos](x) = cos x · 2 Σ_k (-1)^k / ((2k)! (2k - σ)) for η = z
        for sigma in [0.5, 1.5] {
            let m = LevyMeasure::truncated_stable(1, sigma, 1.0).unwrap();
            let x = 0.4f64;
            let mut series = 0.0;
            let mut fact = 1.0;
            for k in 1..20 {
                fact *= (2 * k - 1) as f64 * (2 * k) as f64;
                series += (-1f64).powi(k as i32) / (fact * (2.0 * k as f64 - sigma));
            }
            let exact = x.cos() * 2.0 * series;
            let v = jump_operator(&m, |z, o| o[0] = z[0], &|y| y[0].cos(), &[x], &[-x.sin()], &[-x.cos()], TAYLOR_RADIUS).unwrap();
            assert_relative_eq!(v, exact, max_relative = 1e-9);
        }
    }
}
