//! Per-node monotone stencils: upwind drift weights `d`, nonlocal
//! quadrature weights `κ_j = ∫_{|z|>δ} ω_j(η(z)) ν(dz)`, the compensated
//! drift `b̃ = b - b_δ`, and the positive-coefficient (CFL) checks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use thiserror::Error;

use crate::grid::{for_each_tent, Grid};
use crate::levy::MeasureError;
use crate::math::{floor, powf};
use crate::par::map_range;
use crate::problem::{ControlProblem, EtaDependence};
use crate::{Offset, MAX_DIM};

/// Stencil entries below this are dropped.
pub const WEIGHT_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StencilError {
    #[error("truncation radius delta = {delta} is below the mesh size dx = {dx}")]
    DeltaBelowDx { delta: f64, dx: f64 },
    #[error("truncation radius delta = {0} must lie in (0, 1]")]
    DeltaOutOfRange(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// The nonlocal part of a stencil: `κ_j` (offset relative to the node,
/// sorted, origin included) and `b_δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlocalPart {
    pub kappa: Vec<(Offset, f64)>,
    pub b_delta: [f64; MAX_DIM],
}

impl NonlocalPart {
    pub fn empty() -> Self {
        Self { kappa: Vec::new(), b_delta: [0.0; MAX_DIM] }
    }
    /// `Σ_{j≠0} κ_j`.
    pub fn off_center_sum(&self) -> f64 {
        self.kappa.iter().filter(|(o, _)| *o != [0; MAX_DIM]).map(|(_, w)| w).sum()
    }
}

/// Drift and nonlocal weights of one node and control pair.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilWeights {
    /// `d_{±e_i}`, only positive entries.
    pub drift: Vec<(Offset, f64)>,
    pub nonlocal: Arc<NonlocalPart>,
    pub b_tilde: [f64; MAX_DIM],
    pub t: f64,
    pub x: [f64; MAX_DIM],
    pub a: usize,
    pub b: usize,
    pub delta: f64,
}

impl StencilWeights {
    pub fn b_delta(&self) -> &[f64; MAX_DIM] {
        &self.nonlocal.b_delta
    }
    pub fn kappa(&self) -> &[(Offset, f64)] {
        &self.nonlocal.kappa
    }
    /// `Σ d`.
    pub fn drift_sum(&self) -> f64 {
        self.drift.iter().map(|(_, w)| w).sum()
    }
    /// `Σ_{j≠0} κ_j`.
    pub fn nonlocal_sum(&self) -> f64 {
        self.nonlocal.off_center_sum()
    }
    /// `Σ_j κ_j` including the origin.
    pub fn nonlocal_total(&self) -> f64 {
        self.nonlocal.kappa.iter().map(|(_, w)| w).sum()
    }
    /// `Σ_{j≠0} κ_j · Δx / Γ(σ, δ)`, the measured constant of the bound `Σκ ≤ (K/Δx) Γ`.
    pub fn measured_kn(&self, dx: f64, sigma: f64) -> f64 {
        self.nonlocal_sum() * dx / crate::levy::gamma_factor(sigma, self.delta)
    }
    /// Rows `(kind, offset, weight)` for diagnostics.
    pub fn rows(&self) -> Vec<(&'static str, Offset, f64)> {
        self.drift.iter().map(|(o, w)| ("drift", *o, *w)).chain(self.nonlocal.kappa.iter().map(|(o, w)| ("nonlocal", *o, *w))).collect()
    }

    /// Test hook: flips the sign of the largest off-centre `κ_j`.
    pub fn inject_negative_kappa(&mut self) {
        let mut part = (*self.nonlocal).clone();
        if let Some(entry) = part.kappa.iter_mut().filter(|(o, _)| *o != [0; MAX_DIM]).max_by(|a, b| a.1.total_cmp(&b.1)) {
            entry.1 = -entry.1.abs().max(1.0);
        } else {
            let mut o = [0; MAX_DIM];
            o[0] = 1;
            part.kappa.push((o, -1.0));
        }
        self.nonlocal = Arc::new(part);
    }
}

/// Upwind weights `d_{+e_i} = b̃_i⁺/Δx`, `d_{-e_i} = b̃_i⁻/Δx`.
pub fn drift_weights(b_tilde: &[f64], dx: f64) -> Vec<(Offset, f64)> {
    let mut out = Vec::new();
    for (i, &v) in b_tilde.iter().enumerate() {
        let mut o = [0; MAX_DIM];
        o[i] = if v > 0.0 { 1 } else { -1 };
        let w = v.abs() / dx;
        if w >= WEIGHT_THRESHOLD {
            out.push((o, w));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// `b_δ = ∫_{|z|>δ} η ν(dz)` and `b̃ = b - b_δ`.
pub fn effective_drift(problem: &ControlProblem, t: f64, x: &[f64], a: usize, b: usize, delta: f64) -> Result<([f64; MAX_DIM], [f64; MAX_DIM]), StencilError> {
    check_delta(delta)?;
    let n = problem.space_dim();
    let mut b_delta = [0.0; MAX_DIM];
    if !problem.has_no_jumps() {
        let v = problem.measure().shell_integral(delta, n, |z, out| problem.jump(t, x, a, b, z, out))?;
        b_delta[..n].copy_from_slice(&v);
    }
    let mut b_tilde = [0.0; MAX_DIM];
    problem.drift(t, x, a, b, &mut b_tilde[..n]);
    for i in 0..n {
        b_tilde[i] -= b_delta[i];
    }
    Ok((b_delta, b_tilde))
}

fn check_delta(delta: f64) -> Result<(), StencilError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(StencilError::DeltaOutOfRange(delta));
    }
    Ok(())
}

/// `δ ≥ Δx` up to rounding.
pub fn check_delta_dx(delta: f64, dx: f64) -> Result<(), StencilError> {
    check_delta(delta)?;
    if delta < dx * (1.0 - 1e-12) {
        return Err(StencilError::DeltaBelowDx { delta, dx });
    }
    Ok(())
}

/// `κ_j` by radial quadrature along each direction of the angular rule.
/// Each radial shell is split where `η(z)` changes grid cell, so the tent
/// integrand is smooth on every piece and a fixed Gauss rule applies.
pub fn nonlocal_weights(problem: &ControlProblem, t: f64, x: &[f64], a: usize, b: usize, delta: f64, dx: f64) -> Result<Vec<(Offset, f64)>, StencilError> {
    check_delta_dx(delta, dx)?;
    if problem.has_no_jumps() {
        return Ok(Vec::new());
    }
    let eta = |z: &[f64], out: &mut [f64]| problem.jump(t, x, a, b, z, out);
    Ok(deposit(problem, &eta, delta, dx))
}

pub(crate) fn deposit(problem: &ControlProblem, eta: &dyn Fn(&[f64], &mut [f64]), delta: f64, dx: f64) -> Vec<(Offset, f64)> {
    let n = problem.space_dim();
    let measure = problem.measure();
    let m = measure.jump_dim();
    let rule = measure.rule();
    let mut acc: BTreeMap<Offset, f64> = BTreeMap::new();
    let mut z = [0.0; MAX_DIM];
    let mut e = [0.0; MAX_DIM];
    let panels = measure.outer_panels(delta);
    for (dir, w_ang) in measure.directions() {
        let mut cell = |r: f64| -> Offset {
            for i in 0..m {
                z[i] = r * dir[i];
            }
            eta(&z[..m], &mut e[..n]);
            let mut c = [0; MAX_DIM];
            for i in 0..n {
                c[i] = floor(e[i] / dx) as i64;
            }
            c
        };
        let mut pieces: Vec<(f64, f64)> = Vec::new();
        for &(lo, hi) in &panels {
            let mut r0 = lo;
            let mut c0 = cell(r0);
            let c1 = cell(hi);
            let mut guard = 0usize;
            while c0 != c1 || guard == 0 {
                guard += 1;
                if c0 == c1 {
                    break;
                }
                // bisect for the first cell change after r0
                let (mut l, mut h) = (r0, hi);
                while h - l > 4.0 * f64::EPSILON * h {
                    let mid = 0.5 * (l + h);
                    if cell(mid) == c0 {
                        l = mid;
                    } else {
                        h = mid;
                    }
                }
                let cut = h;
                if cut > r0 {
                    pieces.push((r0, cut));
                }
                r0 = cut;
                c0 = cell(r0);
                if guard > 1 << 24 {
                    break;
                }
            }
            if hi > r0 {
                pieces.push((r0, hi));
            }
        }
        for (lo, hi) in pieces {
            for i in 0..rule.len() {
                let (r, w) = rule.point(i, lo, hi);
                for k in 0..m {
                    z[k] = r * dir[k];
                }
                let k = measure.density(&z[..m]);
                if k == 0.0 {
                    continue;
                }
                let weight = w * w_ang * k * powf(r, (m - 1) as f64);
                eta(&z[..m], &mut e[..n]);
                for_each_tent(&e[..n], dx, |idx, wt| *acc.entry(idx).or_insert(0.0) += weight * wt);
            }
        }
    }
    acc.into_iter().filter(|(_, w)| *w >= WEIGHT_THRESHOLD).collect()
}

/// Assembled nonlocal part at `(t, x, a, b)`.
pub fn nonlocal_part(problem: &ControlProblem, t: f64, x: &[f64], a: usize, b: usize, delta: f64, dx: f64) -> Result<NonlocalPart, StencilError> {
    check_delta_dx(delta, dx)?;
    if problem.has_no_jumps() {
        return Ok(NonlocalPart::empty());
    }
    let (b_delta, _) = effective_drift(problem, t, x, a, b, delta)?;
    let kappa = nonlocal_weights(problem, t, x, a, b, delta, dx)?;
    Ok(NonlocalPart { kappa, b_delta })
}

/// Full stencil at `(t, x, a, b)`.
pub fn assemble(problem: &ControlProblem, t: f64, x: &[f64], a: usize, b: usize, delta: f64, dx: f64) -> Result<StencilWeights, StencilError> {
    let part = Arc::new(nonlocal_part(problem, t, x, a, b, delta, dx)?);
    Ok(with_drift(problem, part, t, x, a, b, delta, dx))
}

#[allow(clippy::too_many_arguments)]
fn with_drift(problem: &ControlProblem, part: Arc<NonlocalPart>, t: f64, x: &[f64], a: usize, b: usize, delta: f64, dx: f64) -> StencilWeights {
    let n = problem.space_dim();
    let mut b_tilde = [0.0; MAX_DIM];
    problem.drift(t, x, a, b, &mut b_tilde[..n]);
    for i in 0..n {
        b_tilde[i] -= part.b_delta[i];
    }
    let mut xs = [0.0; MAX_DIM];
    xs[..n].copy_from_slice(x);
    StencilWeights { drift: drift_weights(&b_tilde[..n], dx), nonlocal: part, b_tilde, t, x: xs, a, b, delta }
}

/// Nonlocal parts cached according to how `η` depends on `(t, x)`:
/// one per control pair (constant), per node and pair (`x` only), or
/// per node and pair at each requested time.
#[derive(Clone, Debug)]
pub struct StencilCache {
    delta: f64,
    pairs: usize,
    dependence: EtaDependence,
    no_jumps: bool,
    /// Time the entries were assembled at (`x`/`t`-dependent case).
    time: f64,
    entries: Vec<Arc<NonlocalPart>>,
}

impl StencilCache {
    pub fn new(problem: &ControlProblem, grid: &Grid, delta: f64, t: f64) -> Result<Self, StencilError> {
        check_delta_dx(delta, grid.dx())?;
        let pairs = problem.controls_a() * problem.controls_b();
        let mut out = Self { delta, pairs, dependence: problem.eta_dependence(), no_jumps: problem.has_no_jumps(), time: t, entries: Vec::new() };
        out.fill(problem, grid, t)?;
        Ok(out)
    }

    fn fill(&mut self, problem: &ControlProblem, grid: &Grid, t: f64) -> Result<(), StencilError> {
        let nb = problem.controls_b();
        let n = grid.dim();
        let dx = grid.dx();
        let delta = self.delta;
        self.time = t;
        if self.no_jumps {
            self.entries = alloc::vec![Arc::new(NonlocalPart::empty())];
            return Ok(());
        }
        let per_node = self.dependence != EtaDependence::Constant;
        let count = if per_node { grid.node_count() * self.pairs } else { self.pairs };
        let pairs = self.pairs;
        let built = map_range(count, |k| {
            let (node, pair) = (k / pairs, k % pairs);
            let mut x = [0.0; MAX_DIM];
            if per_node {
                grid.coords(node, &mut x);
            }
            nonlocal_part(problem, t, &x[..n], pair / nb, pair % nb, delta, dx).map(Arc::new)
        });
        self.entries = built.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(())
    }

    /// Re-assembles time-dependent entries for time `t` (no-op otherwise).
    pub fn refresh(&mut self, problem: &ControlProblem, grid: &Grid, t: f64) -> Result<(), StencilError> {
        if self.dependence == EtaDependence::XtDependent && !self.no_jumps && t != self.time {
            self.fill(problem, grid, t)?;
        }
        Ok(())
    }

    pub fn time_dependent(&self) -> bool {
        self.dependence == EtaDependence::XtDependent && !self.no_jumps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Time the cached entries were assembled at.
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn part(&self, node: usize, a: usize, b: usize, nb: usize) -> &Arc<NonlocalPart> {
        if self.no_jumps {
            return &self.entries[0];
        }
        let pair = a * nb + b;
        match self.dependence {
            EtaDependence::Constant => &self.entries[pair],
            _ => &self.entries[node * self.pairs + pair],
        }
    }

    /// Stencil of `node` and pair `(a, b)` with drift evaluated at `t`.
    pub fn weights(&self, problem: &ControlProblem, grid: &Grid, node: usize, a: usize, b: usize, t: f64) -> StencilWeights {
        let mut x = [0.0; MAX_DIM];
        grid.coords(node, &mut x);
        let part = self.part(node, a, b, problem.controls_b()).clone();
        with_drift(problem, part, t, &x[..grid.dim()], a, b, self.delta, grid.dx())
    }
}

/// Outcome of a CFL check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflReport {
    pub satisfied: bool,
    /// Largest sampled `Δt[(1-θ)Σd + (1-ϑ)Σκ + c]`.
    pub worst_ratio: f64,
    /// `Δt / worst_ratio` when violated, `Δt` otherwise.
    pub suggested_dt: f64,
}

/// Evaluates `Δt[(1-θ)Σd + (1-ϑ)Σ_{j≠0}κ + c] ≤ 1` over the sampled
/// `(stencil, c)` pairs.
pub fn cfl_check<'a, I>(samples: I, dt: f64, theta: f64, vartheta: f64) -> CflReport
where
    I: IntoIterator<Item = (&'a StencilWeights, f64)>,
{
    let worst = samples.into_iter().map(|(w, c)| dt * ((1.0 - theta) * w.drift_sum() + (1.0 - vartheta) * w.nonlocal_sum() + c)).fold(0.0f64, f64::max);
    let satisfied = worst <= 1.0 + 1e-12;
    CflReport { satisfied, worst_ratio: worst, suggested_dt: if satisfied { dt } else { dt / worst } }
}

/// Coefficients of the positive form of the scheme at one node:
/// `a_c^{n,n} U_j^n = Σ a^{n,n}_k U_k^n + a_c^{n,n-1} U_j^{n-1} + Σ a^{n,n-1}_k U_k^{n-1} + Δt f`.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeCoefficients {
    pub implicit_center: f64,
    pub explicit_center: f64,
    pub implicit: Vec<(Offset, f64)>,
    pub explicit: Vec<(Offset, f64)>,
}

impl SchemeCoefficients {
    /// Builds the coefficients from stencils at `t_n` (`curr`) and `t_{n-1}` (`prev`).
    pub fn new(curr: &StencilWeights, prev: &StencilWeights, c: f64, dt: f64, theta: f64, vartheta: f64) -> Self {
        let zero = [0; MAX_DIM];
        let collect = |w: &StencilWeights, sd: f64, sk: f64| -> Vec<(Offset, f64)> {
            let mut map: BTreeMap<Offset, f64> = BTreeMap::new();
            for (o, v) in &w.drift {
                *map.entry(*o).or_insert(0.0) += dt * sd * v;
            }
            for (o, v) in w.kappa() {
                if *o != zero {
                    *map.entry(*o).or_insert(0.0) += dt * sk * v;
                }
            }
            map.into_iter().collect()
        };
        Self {
            implicit_center: 1.0 + dt * (theta * curr.drift_sum() + vartheta * curr.nonlocal_sum()),
            explicit_center: 1.0 - dt * ((1.0 - theta) * prev.drift_sum() + (1.0 - vartheta) * prev.nonlocal_sum() + c),
            implicit: collect(curr, theta, vartheta),
            explicit: collect(prev, 1.0 - theta, 1.0 - vartheta),
        }
    }

    /// Smallest coefficient, with a description of where it sits.
    pub fn min_coefficient(&self) -> (f64, String) {
        let mut best = (self.implicit_center, String::from("implicit centre"));
        if self.explicit_center < best.0 {
            best = (self.explicit_center, String::from("explicit centre"));
        }
        for (label, list) in [("implicit", &self.implicit), ("explicit", &self.explicit)] {
            for (o, v) in list {
                if *v < best.0 {
                    best = (*v, format!("{label} offset {o:?}"));
                }
            }
        }
        best
    }

    pub fn all_nonnegative(&self) -> bool {
        self.min_coefficient().0 >= 0.0
    }
}
