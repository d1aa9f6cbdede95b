//! Thin wrappers over `libm` so the same code paths (and bits) are used with
//! and without `std`.

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    sqrt(v.iter().map(|a| a * a).sum())
}

pub(crate) const PI: f64 = core::f64::consts::PI;

/// Surface measure of the unit sphere in `R^m` (`2` for `m = 1`).
pub(crate) fn sphere_area(m: usize) -> f64 {
    match m {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => 2.0 * powf(PI, m as f64 / 2.0) / libm::tgamma(m as f64 / 2.0),
    }
}
