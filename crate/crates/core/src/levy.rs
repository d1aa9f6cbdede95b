//! Lévy measures `ν` with an order-`σ` singularity at the origin, and the
//! truncated shell integrals the scheme is assembled from.
//!
//! Integrals over `|z| > δ` are split into dyadic radial shells
//! `[2^{-k-1}, 2^{-k}]` (plus dyadically growing shells beyond `|z| = 1`
//! when the measure has a tail). On each shell the density is smooth, so a
//! fixed Gauss–Legendre rule with adaptive bisection converges quickly; the
//! singularity only shows up through the shell scaling. For `M > 1` the
//! radial rule is tensorised with an angular rule.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::math::{abs, cos, exp, ln, norm, powf, sin, sphere_area, PI};
use crate::quadrature::{integrate_adaptive, GaussLegendre, Tolerance};

/// Scalar function of the jump variable `z ∈ R^M`.
pub type JumpFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Absolute tolerance per radial shell.
pub const SHELL_TOL: f64 = 1e-10;
/// Tempered tails are integrated out to where the tempering factor drops below this.
pub const TAIL_CUTOFF: f64 = 1e-14;
const REL_TOL: f64 = 1e-12;
const MAX_BISECTIONS: u32 = 30;
const MAX_INNER_SHELLS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("invalid measure parameter: {0}")]
    InvalidParameter(String),
    #[error("shell quadrature did not reach tolerance (last partial sum {partial:e})")]
    IntegrationFailure { partial: f64 },
    #[error("jump dimension {0} is not supported (1..=3)")]
    UnsupportedDimension(usize),
}

/// Which closed forms are available for a measure.
#[derive(Clone)]
pub enum MeasureKind {
    /// `scale · 1_{|z|<1} / |z|^{M+σ}`.
    TruncatedStable { scale: f64 },
    /// `scale · e^{-rate |z|} / |z|^{M+σ}`.
    TemperedStable { scale: f64, rate: f64 },
    /// User density supported in `|z| ≤ tail_radius`.
    Custom { density: JumpFn, tail_radius: f64 },
}

impl fmt::Debug for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TruncatedStable { scale } => write!(f, "TruncatedStable {{ scale: {scale} }}"),
            Self::TemperedStable { scale, rate } => {
                write!(f, "TemperedStable {{ scale: {scale}, rate: {rate} }}")
            }
            Self::Custom { tail_radius, .. } => write!(f, "Custom {{ tail_radius: {tail_radius} }}"),
        }
    }
}

/// A Lévy measure `ν(dz) = k(z) dz` on `R^M \ {0}` together with the
/// envelope `ρ` bounding the jump map.
#[derive(Clone)]
pub struct LevyMeasure {
    sigma: f64,
    jump_dim: usize,
    density_constant: f64,
    rho: JumpFn,
    kind: MeasureKind,
    rule: Arc<GaussLegendre>,
    angular: Arc<Vec<(Vec<f64>, f64)>>,
    null: bool,
}

impl fmt::Debug for LevyMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyMeasure")
            .field("sigma", &self.sigma)
            .field("jump_dim", &self.jump_dim)
            .field("density_constant", &self.density_constant)
            .field("kind", &self.kind)
            .finish()
    }
}

fn euclid_rho() -> JumpFn {
    Arc::new(|z: &[f64]| norm(z))
}

impl LevyMeasure {
    fn build(sigma: f64, jump_dim: usize, density_constant: f64, rho: JumpFn, kind: MeasureKind) -> Result<Self, MeasureError> {
        if !(0.0..2.0).contains(&sigma) {
            return Err(MeasureError::InvalidParameter(alloc::format!("sigma = {sigma} outside [0, 2)")));
        }
        if !(1..=3).contains(&jump_dim) {
            return Err(MeasureError::UnsupportedDimension(jump_dim));
        }
        if !(density_constant > 0.0 && density_constant.is_finite()) {
            return Err(MeasureError::InvalidParameter("density constant must be positive".into()));
        }
        Ok(Self {
            sigma,
            jump_dim,
            density_constant,
            rho,
            kind,
            rule: Arc::new(GaussLegendre::new(16)),
            angular: Arc::new(angular_rule(jump_dim)),
            null: false,
        })
    }

    /// Truncated `σ`-stable measure `scale · 1_{|z|<1} |z|^{-(M+σ)} dz`.
    pub fn truncated_stable(jump_dim: usize, sigma: f64, scale: f64) -> Result<Self, MeasureError> {
        if !(scale > 0.0) {
            return Err(MeasureError::InvalidParameter("scale must be positive".into()));
        }
        Self::build(sigma, jump_dim, scale, euclid_rho(), MeasureKind::TruncatedStable { scale })
    }

    /// Tempered `σ`-stable measure `scale · e^{-rate|z|} |z|^{-(M+σ)} dz`.
    pub fn tempered_stable(jump_dim: usize, sigma: f64, scale: f64, rate: f64) -> Result<Self, MeasureError> {
        if !(scale > 0.0) || !(rate > 0.0) {
            return Err(MeasureError::InvalidParameter("scale and rate must be positive".into()));
        }
        Self::build(sigma, jump_dim, scale, euclid_rho(), MeasureKind::TemperedStable { scale, rate })
    }

    /// Custom density; `rho` must be supplied since it cannot be inferred.
    pub fn custom(jump_dim: usize, sigma: f64, density_constant: f64, density: JumpFn, rho: JumpFn, tail_radius: f64) -> Result<Self, MeasureError> {
        if !(tail_radius >= 1.0 && tail_radius.is_finite()) {
            return Err(MeasureError::InvalidParameter("tail radius must be finite and >= 1".into()));
        }
        Self::build(sigma, jump_dim, density_constant, rho, MeasureKind::Custom { density, tail_radius })
    }

    /// The null measure (no jumps).
    pub fn zero(jump_dim: usize) -> Result<Self, MeasureError> {
        let mut out = Self::custom(jump_dim, 0.0, 1.0, Arc::new(|_: &[f64]| 0.0), euclid_rho(), 1.0)?;
        out.null = true;
        Ok(out)
    }

    /// Whether this is the null measure built by [`LevyMeasure::zero`].
    pub fn is_null(&self) -> bool {
        self.null
    }

    /// Replace the envelope `ρ`.
    pub fn with_rho(mut self, rho: JumpFn) -> Self {
        self.rho = rho;
        self
    }

    /// Same measure with the density multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self, MeasureError> {
        if !(factor > 0.0) {
            return Err(MeasureError::InvalidParameter("scale factor must be positive".into()));
        }
        let kind = match &self.kind {
            MeasureKind::TruncatedStable { scale } => MeasureKind::TruncatedStable { scale: scale * factor },
            MeasureKind::TemperedStable { scale, rate } => MeasureKind::TemperedStable { scale: scale * factor, rate: *rate },
            MeasureKind::Custom { density, tail_radius } => {
                let d = density.clone();
                MeasureKind::Custom { density: Arc::new(move |z: &[f64]| factor * d(z)), tail_radius: *tail_radius }
            }
        };
        let mut out = self.clone();
        out.kind = kind;
        out.density_constant *= factor;
        Ok(out)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jump_dim(&self) -> usize {
        self.jump_dim
    }

    pub fn density_constant(&self) -> f64 {
        self.density_constant
    }

    pub fn kind(&self) -> &MeasureKind {
        &self.kind
    }

    /// Density `k(z)`.
    pub fn density(&self, z: &[f64]) -> f64 {
        let r = norm(z);
        match &self.kind {
            MeasureKind::TruncatedStable { scale } => {
                if r < 1.0 && r > 0.0 {
                    scale * powf(r, -(self.jump_dim as f64 + self.sigma))
                } else {
                    0.0
                }
            }
            MeasureKind::TemperedStable { scale, rate } => {
                if r > 0.0 {
                    scale * exp(-rate * r) * powf(r, -(self.jump_dim as f64 + self.sigma))
                } else {
                    0.0
                }
            }
            MeasureKind::Custom { density, .. } => {
                if r > 0.0 {
                    density(z)
                } else {
                    0.0
                }
            }
        }
    }

    /// Envelope `ρ(z)`.
    pub fn rho(&self, z: &[f64]) -> f64 {
        (self.rho)(z)
    }

    /// Radius beyond which the measure carries no (numerically relevant) mass.
    pub fn support_radius(&self) -> f64 {
        match &self.kind {
            MeasureKind::TruncatedStable { .. } => 1.0,
            MeasureKind::TemperedStable { rate, .. } => (-ln(TAIL_CUTOFF) / rate).max(1.0),
            MeasureKind::Custom { tail_radius, .. } => *tail_radius,
        }
    }

    /// `∫_{|z|>δ} ν(dz)`.
    pub fn truncated_mass(&self, delta: f64) -> Result<f64, MeasureError> {
        check_delta(delta)?;
        match &self.kind {
            MeasureKind::TruncatedStable { scale } => {
                if delta >= 1.0 {
                    return Ok(0.0);
                }
                let s = scale * sphere_area(self.jump_dim);
                if self.sigma == 0.0 {
                    Ok(-s * ln(delta))
                } else {
                    Ok(s * (powf(delta, -self.sigma) - 1.0) / self.sigma)
                }
            }
            _ => Ok(self.shell_integral(delta, 1, |_, out| out[0] = 1.0)?[0]),
        }
    }

    /// `∫_{|z|<δ} |z|² ν(dz)`.
    pub fn small_jump_second_moment(&self, delta: f64) -> Result<f64, MeasureError> {
        check_delta(delta)?;
        let s = sphere_area(self.jump_dim);
        match &self.kind {
            MeasureKind::TruncatedStable { scale } => {
                let d = delta.min(1.0);
                Ok(scale * s * powf(d, 2.0 - self.sigma) / (2.0 - self.sigma))
            }
            MeasureKind::TemperedStable { scale, rate } => {
                let a = 2.0 - self.sigma;
                Ok(scale * s * powf(*rate, -a) * lower_incomplete_gamma(a, rate * delta))
            }
            MeasureKind::Custom { .. } => Ok(self.small_shell_integral(delta, 1, |z, out| out[0] = z.iter().map(|v| v * v).sum())?[0]),
        }
    }

    /// `∫_{|z|>δ} g(z) ν(dz)` for a vector-valued integrand `g` of length
    /// `dim`, written into the output slice.
    pub fn shell_integral<F>(&self, delta: f64, dim: usize, mut integrand: F) -> Result<Vec<f64>, MeasureError>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        check_delta(delta)?;
        let mut acc = vec![0.0; dim];
        let mut ok = true;
        for (a, b) in self.outer_panels(delta) {
            ok &= self.integrate_radial(a, b, &mut integrand, &mut acc);
        }
        if ok {
            Ok(acc)
        } else {
            Err(MeasureError::IntegrationFailure { partial: norm(&acc) })
        }
    }

    /// `∫_{|z|≤δ} g(z) ν(dz)` for integrands that are `O(|z|²)` at the
    /// origin, summed over shells `(δ 2^{-k-1}, δ 2^{-k}]` until the
    /// geometric remainder estimate drops below tolerance.
    pub fn small_shell_integral<F>(&self, delta: f64, dim: usize, mut integrand: F) -> Result<Vec<f64>, MeasureError>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        check_delta(delta)?;
        let mut acc = vec![0.0; dim];
        let q = powf(2.0, self.sigma - 2.0);
        let mut hi = delta;
        let mut shell = vec![0.0; dim];
        for k in 0..MAX_INNER_SHELLS {
            let lo = 0.5 * hi;
            shell.iter_mut().for_each(|v| *v = 0.0);
            if !self.integrate_radial(lo, hi, &mut integrand, &mut shell) {
                return Err(MeasureError::IntegrationFailure { partial: norm(&acc) });
            }
            for (a, s) in acc.iter_mut().zip(shell.iter()) {
                *a += s;
            }
            let remainder = norm(&shell) * q / (1.0 - q);
            if k >= 3 && remainder <= SHELL_TOL.min(REL_TOL * norm(&acc)) {
                return Ok(acc);
            }
            if lo < 1e-280 {
                // geometric extrapolation of the remaining shells
                for (a, s) in acc.iter_mut().zip(shell.iter()) {
                    *a += s * q / (1.0 - q);
                }
                return Ok(acc);
            }
            hi = lo;
        }
        Err(MeasureError::IntegrationFailure { partial: norm(&acc) })
    }

    /// Radial breakpoints for `δ < |z| ≤ support radius`: dyadic shells below
    /// one, doubling shells above.
    pub(crate) fn outer_panels(&self, delta: f64) -> Vec<(f64, f64)> {
        let end = self.support_radius();
        let mut cuts = Vec::new();
        if delta >= end {
            return Vec::new();
        }
        cuts.push(delta);
        let mut r = 1.0;
        while r > delta {
            r *= 0.5;
        }
        r *= 2.0;
        while r < end {
            if r > delta {
                cuts.push(r);
            }
            r *= 2.0;
        }
        cuts.push(end);
        cuts.dedup();
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub(crate) fn rule(&self) -> &GaussLegendre {
        &self.rule
    }

    /// Unit directions and weights of the angular rule (`±1` in 1D).
    pub(crate) fn directions(&self) -> &[(Vec<f64>, f64)] {
        &self.angular
    }

    /// Integrates over `a < |z| ≤ b`, adding into `acc`.
    fn integrate_radial<F>(&self, a: f64, b: f64, integrand: &mut F, acc: &mut [f64]) -> bool
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let dim = acc.len();
        let tol = Tolerance { abs: SHELL_TOL, rel: REL_TOL, max_depth: MAX_BISECTIONS };
        let m = self.jump_dim;
        let mut z = vec![0.0; m];
        let mut tmp = vec![0.0; dim];
        if m == 1 {
            let mut ok = true;
            for sign in [1.0, -1.0] {
                ok &= integrate_adaptive(
                    &self.rule,
                    a,
                    b,
                    tol,
                    &mut |r, out: &mut [f64]| {
                        z[0] = sign * r;
                        let k = self.density(&z);
                        if k == 0.0 {
                            return;
                        }
                        integrand(&z, out);
                        out.iter_mut().for_each(|v| *v *= k);
                    },
                    acc,
                );
            }
            ok
        } else {
            let angular = self.angular.clone();
            integrate_adaptive(
                &self.rule,
                a,
                b,
                tol,
                &mut |r, out: &mut [f64]| {
                    let jac = powf(r, (m - 1) as f64);
                    for (dir, w) in angular.iter() {
                        for i in 0..m {
                            z[i] = r * dir[i];
                        }
                        let k = self.density(&z);
                        if k == 0.0 {
                            continue;
                        }
                        tmp.iter_mut().for_each(|v| *v = 0.0);
                        integrand(&z, &mut tmp);
                        for (o, t) in out.iter_mut().zip(tmp.iter()) {
                            *o += jac * w * k * t;
                        }
                    }
                },
                acc,
            )
        }
    }
}

fn check_delta(delta: f64) -> Result<(), MeasureError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(MeasureError::InvalidParameter(alloc::format!("truncation radius {delta} must be positive")));
    }
    Ok(())
}

/// Unit directions with weights summing to the sphere area.
fn angular_rule(m: usize) -> Vec<(Vec<f64>, f64)> {
    match m {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let n = 64;
            (0..n)
                .map(|k| {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                    (vec![cos(phi), sin(phi)], 2.0 * PI / n as f64)
                })
                .collect()
        }
        _ => {
            let gl = GaussLegendre::new(16);
            let n_az = 32;
            let mut out = Vec::new();
            for i in 0..gl.len() {
                let (u, wu) = gl.point(i, -1.0, 1.0);
                let s = libm::sqrt((1.0 - u * u).max(0.0));
                for k in 0..n_az {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / n_az as f64;
                    out.push((vec![s * cos(phi), s * sin(phi), u], wu * 2.0 * PI / n_az as f64));
                }
            }
            out
        }
    }
}

/// Lower incomplete gamma `γ(s, x)` by its power series (`s > 0`).
fn lower_incomplete_gamma(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / s;
    let mut sum = term;
    for k in 1..10_000 {
        term *= x / (s + k as f64);
        sum += term;
        if abs(term) < 1e-17 * abs(sum) {
            break;
        }
    }
    powf(x, s) * exp(-x) * sum
}

/// `Γ(σ, δ)`: `δ^{1-σ}` for `σ > 1`, `-ln δ` for `σ = 1` (1 at `δ = 1`),
/// and 1 for `σ < 1`.
pub fn gamma_factor(sigma: f64, delta: f64) -> f64 {
    if sigma > 1.0 {
        powf(delta, 1.0 - sigma)
    } else if sigma == 1.0 {
        if delta >= 1.0 {
            1.0
        } else {
            -ln(delta)
        }
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn stable(sigma: f64) -> LevyMeasure {
        LevyMeasure::truncated_stable(1, sigma, 1.0).unwrap()
    }

    /// Same density as `stable`, but routed through the quadrature path.
    fn stable_as_custom(sigma: f64) -> LevyMeasure {
        LevyMeasure::custom(
            1,
            sigma,
            1.0,
            Arc::new(move |z: &[f64]| {
                let r = z[0].abs();
                if r < 1.0 {
                    r.powf(-1.0 - sigma)
                } else {
                    0.0
                }
            }),
            Arc::new(|z: &[f64]| z[0].abs()),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn truncated_mass_examples() {
        assert_relative_eq!(stable(0.5).truncated_mass(0.25).unwrap(), 4.0, max_relative = 1e-14);
        assert_eq!(stable(0.5).truncated_mass(1.0).unwrap(), 0.0);
        let expected = (4.0 / 3.0) * (0.5f64.powf(-1.5) - 1.0);
        assert_relative_eq!(stable(1.5).truncated_mass(0.5).unwrap(), expected, max_relative = 1e-14);
        assert!((expected - 2.4379).abs() < 1e-4);
    }

    #[test]
    fn second_moment_examples() {
        assert_relative_eq!(stable(0.5).small_jump_second_moment(0.25).unwrap(), 1.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(stable(1.0).small_jump_second_moment(0.5).unwrap(), 1.0, max_relative = 1e-14);
        assert!(stable(1.5).small_jump_second_moment(1e-12).unwrap() < 1e-5);
    }

    #[test]
    fn quadrature_path_matches_closed_forms() {
        for sigma in [0.5, 1.0, 1.5] {
            let exact = stable(sigma);
            let quad = stable_as_custom(sigma);
            for k in 1..=6 {
                let d = 0.5f64.powi(k);
                assert_relative_eq!(quad.truncated_mass(d).unwrap(), exact.truncated_mass(d).unwrap(), max_relative = 1e-10);
                assert_relative_eq!(quad.small_jump_second_moment(d).unwrap(), exact.small_jump_second_moment(d).unwrap(), max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn gamma_factor_branches() {
        assert_relative_eq!(gamma_factor(1.5, 0.01), 10.0, max_relative = 1e-12);
        assert_eq!(gamma_factor(0.5, 0.3), 1.0);
        assert_relative_eq!(gamma_factor(1.0, (-2.0f64).exp()), 2.0, max_relative = 1e-14);
        assert_eq!(gamma_factor(1.0, 1.0), 1.0);
    }

    #[test]
    fn shell_integral_examples() {
        let m = stable(0.5);
        let ones = m.shell_integral(0.25, 1, |_, o| o[0] = 1.0).unwrap()[0];
        assert_relative_eq!(ones, 4.0, max_relative = 1e-11);
        let odd = m.shell_integral(0.25, 1, |z, o| o[0] = z[0]).unwrap()[0];
        assert!(odd.abs() < 1e-12);
        let sq = m.shell_integral(0.25, 1, |z, o| o[0] = z[0] * z[0]).unwrap()[0];
        assert_relative_eq!(sq, 2.0 * (2.0 / 3.0) * (1.0 - 0.25f64.powf(1.5)), max_relative = 1e-11);
        // indicator of |z| > 0.5 reproduces the mass beyond 0.5
        let ind = m.shell_integral(0.25, 1, |z, o| o[0] = if z[0].abs() > 0.5 { 1.0 } else { 0.0 }).unwrap()[0];
        assert_relative_eq!(ind, m.truncated_mass(0.5).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn second_moment_scales_like_power() {
        for sigma in [0.5, 1.0, 1.5] {
            let m = stable(sigma);
            let base = m.small_jump_second_moment(0.5).unwrap() / 0.5f64.powf(2.0 - sigma);
            for k in 2..=10 {
                let d = 0.5f64.powi(k);
                let r = m.small_jump_second_moment(d).unwrap() / d.powf(2.0 - sigma);
                assert_relative_eq!(r, base, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn tempered_measure_is_consistent() {
        let t = LevyMeasure::tempered_stable(1, 0.7, 1.0, 2.0).unwrap();
        let quad = t.small_shell_integral(0.3, 1, |z, o| o[0] = z[0] * z[0]).unwrap()[0];
        assert_relative_eq!(quad, t.small_jump_second_moment(0.3).unwrap(), max_relative = 1e-9);
        let m1 = t.truncated_mass(0.1).unwrap();
        let m2 = t.truncated_mass(0.2).unwrap();
        assert!(m1 > m2 && m2 > 0.0);
        // tail mass beyond 1 equals 2∫_1^∞ e^{-2r} r^{-1.7} dr
        let tail = t.truncated_mass(1.0).unwrap();
        assert!(tail > 0.0 && tail < (-2.0f64).exp());
    }

    #[test]
    fn multidimensional_mass_matches_polar_closed_form() {
        for m in [2usize, 3] {
            let meas = LevyMeasure::truncated_stable(m, 0.8, 1.0).unwrap();
            let closed = meas.truncated_mass(0.125).unwrap();
            let quad = meas.shell_integral(0.125, 1, |_, o| o[0] = 1.0).unwrap()[0];
            assert_relative_eq!(quad, closed, max_relative = 1e-9);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LevyMeasure::truncated_stable(1, 2.0, 1.0).is_err());
        assert!(LevyMeasure::truncated_stable(4, 1.0, 1.0).is_err());
        assert!(stable(0.5).truncated_mass(0.0).is_err());
    }

    #[test]
    fn scaling_is_linear() {
        let m = stable(1.2);
        let s = m.scaled(3.0).unwrap();
        assert_relative_eq!(s.truncated_mass(0.1).unwrap(), 3.0 * m.truncated_mass(0.1).unwrap(), max_relative = 1e-14);
    }
}
