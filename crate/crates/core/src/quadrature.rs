//! Gauss–Legendre rules and an adaptive vector-valued integrator.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, cos, PI};

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub(crate) struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub(crate) fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            let mut x = cos(PI * (i as f64 + 0.75) / (nf + 0.5));
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, p_prev) = legendre(n, x);
                dp = nf * (x * p - p_prev) / (x * x - 1.0);
                let dx = p / dp;
                x -= dx;
                if abs(dx) < 1e-16 {
                    break;
                }
            }
            let (p, p_prev) = legendre(n, x);
            dp = if p.is_finite() { nf * (x * p - p_prev) / (x * x - 1.0) } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Node and weight `i` mapped to `[a, b]`.
    #[inline]
    pub(crate) fn point(&self, i: usize, a: f64, b: f64) -> (f64, f64) {
        let half = 0.5 * (b - a);
        (a + half * (self.nodes[i] + 1.0), half * self.weights[i])
    }

    fn apply<F: FnMut(f64, &mut [f64])>(&self, a: f64, b: f64, f: &mut F, scratch: &mut [f64], acc: &mut [f64]) {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.len() {
            let (x, w) = self.point(i, a, b);
            scratch.iter_mut().for_each(|v| *v = 0.0);
            f(x, scratch);
            for (s, v) in acc.iter_mut().zip(scratch.iter()) {
                *s += w * v;
            }
        }
    }
}

/// `(P_n(x), P_{n-1}(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Tolerances for [`integrate_adaptive`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_depth: u32,
}

/// Adaptive bisection with a fixed Gauss–Legendre rule; adds the integral of
/// the vector-valued `f` over `[a, b]` into `acc`. Returns `false` when the
/// tolerance was not met within `max_depth` bisections (the best estimate is
/// still accumulated).
pub(crate) fn integrate_adaptive<F: FnMut(f64, &mut [f64])>(rule: &GaussLegendre, a: f64, b: f64, tol: Tolerance, f: &mut F, acc: &mut [f64]) -> bool {
    let dim = acc.len();
    let mut scratch = vec![0.0; dim];
    let mut coarse = vec![0.0; dim];
    rule.apply(a, b, f, &mut scratch, &mut coarse);
    let mut ok = true;
    refine(rule, a, b, &coarse, tol, tol.max_depth, f, &mut scratch, acc, &mut ok);
    ok
}

#[allow(clippy::too_many_arguments)]
fn refine<F: FnMut(f64, &mut [f64])>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    coarse: &[f64],
    tol: Tolerance,
    depth: u32,
    f: &mut F,
    scratch: &mut [f64],
    acc: &mut [f64],
    ok: &mut bool,
) {
    let dim = acc.len();
    let m = 0.5 * (a + b);
    let mut left = vec![0.0; dim];
    let mut right = vec![0.0; dim];
    rule.apply(a, m, f, scratch, &mut left);
    rule.apply(m, b, f, scratch, &mut right);
    let mut err: f64 = 0.0;
    let mut mag: f64 = 0.0;
    for i in 0..dim {
        let fine = left[i] + right[i];
        err = err.max(abs(fine - coarse[i]));
        mag = mag.max(abs(fine));
    }
    if err <= tol.abs.max(tol.rel * mag) {
        for i in 0..dim {
            acc[i] += left[i] + right[i];
        }
        return;
    }
    if depth == 0 || !(m > a && m < b) {
        *ok = false;
        for i in 0..dim {
            acc[i] += left[i] + right[i];
        }
        return;
    }
    let sub = Tolerance { abs: 0.5 * tol.abs, ..tol };
    refine(rule, a, m, &left, sub, depth - 1, f, scratch, acc, ok);
    refine(rule, m, b, &right, sub, depth - 1, f, scratch, acc, ok);
}
