//! Uniform node-centred grid `x_j = j Δx`, `t_n = n Δt` on the box
//! `[-L, L]^N`, multilinear tent interpolation and the stored solution.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math::{abs, floor, round};
use crate::{Offset, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid parameter: {0}")]
    InvalidParameter(String),
    #[error("point cannot be resolved: {0}")]
    Domain(String),
    #[error("slice {0} has non-finite entries")]
    NonFinite(usize),
}

/// Where values at nodes outside the box come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extension {
    /// Copy the nearest boundary node (per-axis clamping).
    ConstantNearest,
    /// Evaluate the initial datum `u₀` at the outside point.
    InitialProfile,
}

/// Result of locating a multi-index on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lookup {
    Node(usize),
    Outside(Offset),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    dx: f64,
    dt: f64,
    steps: usize,
    half_width: i64,
    extension: Extension,
}

impl Grid {
    /// Grid with `steps = T / dt` time steps; `dt` must divide `T` up to
    /// rounding, and is then reset to exactly `T / steps`.
    pub fn new(dim: usize, dx: f64, horizon: f64, dt: f64, box_radius: f64, extension: Extension) -> Result<Self, GridError> {
        if !(dt > 0.0 && horizon > 0.0) {
            return Err(GridError::InvalidParameter("dt and horizon must be positive".into()));
        }
        let steps = round(horizon / dt);
        if steps < 1.0 || abs(steps * dt - horizon) > 1e-9 * horizon {
            return Err(GridError::InvalidParameter(alloc::format!("dt = {dt} does not divide the horizon {horizon}")));
        }
        Self::with_steps(dim, dx, horizon, steps as usize, box_radius, extension)
    }

    pub fn with_steps(dim: usize, dx: f64, horizon: f64, steps: usize, box_radius: f64, extension: Extension) -> Result<Self, GridError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GridError::InvalidParameter(alloc::format!("dimension {dim} outside 1..={MAX_DIM}")));
        }
        if !(dx > 0.0 && dx.is_finite()) || !(box_radius >= dx) || steps == 0 || !(horizon > 0.0) {
            return Err(GridError::InvalidParameter("need dx > 0, box_radius >= dx, steps >= 1".into()));
        }
        let half_width = floor(box_radius / dx + 1e-9) as i64;
        Ok(Self { dim, dx, dt: horizon / steps as f64, steps, half_width, extension })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
    pub fn extension(&self) -> Extension {
        self.extension
    }
    /// Nodes run over `-half_width ..= half_width` on each axis.
    pub fn half_width(&self) -> i64 {
        self.half_width
    }
    /// Effective box radius `half_width · Δx`.
    pub fn box_radius(&self) -> f64 {
        self.half_width as f64 * self.dx
    }
    pub fn nodes_per_axis(&self) -> usize {
        (2 * self.half_width + 1) as usize
    }
    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    /// `t_n = n Δt`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Multi-index of a flat node number (axis 0 fastest).
    pub fn index_of(&self, flat: usize) -> Offset {
        let n = self.nodes_per_axis();
        let mut idx = [0i64; MAX_DIM];
        let mut rest = flat;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = (rest % n) as i64 - self.half_width;
            rest /= n;
        }
        idx
    }

    /// Flat node number, if the multi-index lies in the box.
    pub fn flat_of(&self, idx: &Offset) -> Option<usize> {
        let n = self.nodes_per_axis();
        let mut flat = 0usize;
        let mut stride = 1usize;
        for &i in idx.iter().take(self.dim) {
            if i < -self.half_width || i > self.half_width {
                return None;
            }
            flat += (i + self.half_width) as usize * stride;
            stride *= n;
        }
        Some(flat)
    }

    /// Flat stride of a unit step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.nodes_per_axis().pow(axis as u32)
    }

    /// Coordinates `x_j = j Δx` of a multi-index.
    pub fn coords_of(&self, idx: &Offset, out: &mut [f64]) {
        for d in 0..self.dim {
            out[d] = idx[d] as f64 * self.dx;
        }
    }

    pub fn coords(&self, flat: usize, out: &mut [f64]) {
        let idx = self.index_of(flat);
        self.coords_of(&idx, out);
    }

    /// Locates a multi-index, applying the extension policy.
    pub fn locate(&self, idx: &Offset) -> Lookup {
        if let Some(f) = self.flat_of(idx) {
            return Lookup::Node(f);
        }
        match self.extension {
            Extension::ConstantNearest => {
                let mut c = *idx;
                for v in c.iter_mut().take(self.dim) {
                    *v = (*v).clamp(-self.half_width, self.half_width);
                }
                Lookup::Node(self.flat_of(&c).expect("clamped index lies in the box"))
            }
            Extension::InitialProfile => Lookup::Outside(*idx),
        }
    }

    /// Value of `slice` at a (possibly outside) multi-index.
    pub fn value_at(&self, slice: &[f64], idx: &Offset, u0: &dyn Fn(&[f64]) -> f64) -> f64 {
        match self.locate(idx) {
            Lookup::Node(f) => slice[f],
            Lookup::Outside(o) => {
                let mut x = [0.0; MAX_DIM];
                self.coords_of(&o, &mut x);
                u0(&x[..self.dim])
            }
        }
    }

    /// Samples `u` at every node.
    pub fn sample(&self, u: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = [0.0; MAX_DIM];
        (0..self.node_count())
            .map(|f| {
                self.coords(f, &mut x);
                u(&x[..self.dim])
            })
            .collect()
    }

    /// Whether every coordinate of node `flat` satisfies `|x_i| ≤ radius`.
    pub fn in_window(&self, flat: usize, radius: f64) -> bool {
        let idx = self.index_of(flat);
        idx.iter().take(self.dim).all(|&i| abs(i as f64 * self.dx) <= radius + 1e-12 * self.dx)
    }
}

/// Multilinear hat weight `ω_j(x)` of node `j` at `x`.
pub fn tent_weight(j: &[i64], x: &[f64], dx: f64) -> f64 {
    j.iter().zip(x.iter()).map(|(&ji, &xi)| (1.0 - abs(xi / dx - ji as f64)).max(0.0)).product()
}

/// Calls `f(node, weight)` for every node whose tent weight at `y` is positive.
pub(crate) fn for_each_tent<F: FnMut(Offset, f64)>(y: &[f64], dx: f64, mut f: F) {
    let dim = y.len();
    let mut base = [0i64; MAX_DIM];
    let mut frac = [0.0f64; MAX_DIM];
    for d in 0..dim {
        let s = y[d] / dx;
        let k = floor(s);
        base[d] = k as i64;
        frac[d] = s - k;
    }
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut idx = [0i64; MAX_DIM];
        for d in 0..dim {
            let up = (corner >> d) & 1 == 1;
            idx[d] = base[d] + up as i64;
            w *= if up { frac[d] } else { 1.0 - frac[d] };
        }
        if w > 0.0 {
            f(idx, w);
        }
    }
}

/// `Σ_j slice(j) ω_j(x)`; outside nodes are resolved by the extension policy.
pub fn interpolate(grid: &Grid, slice: &[f64], x: &[f64], u0: Option<&dyn Fn(&[f64]) -> f64>) -> Result<f64, GridError> {
    if x.len() != grid.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(GridError::Domain("point must be finite with the grid dimension".into()));
    }
    let mut acc = 0.0;
    let mut err = None;
    for_each_tent(x, grid.dx(), |idx, w| match grid.locate(&idx) {
        Lookup::Node(f) => acc += w * slice[f],
        Lookup::Outside(o) => match u0 {
            Some(u) => {
                let mut p = [0.0; MAX_DIM];
                grid.coords_of(&o, &mut p);
                acc += w * u(&p[..grid.dim()]);
            }
            None => err = Some(GridError::Domain("outside point needs the initial profile".into())),
        },
    });
    match err {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}

/// Time slices `U^n_j` of a computed solution.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionField {
    grid: Grid,
    label: String,
    slices: Vec<Vec<f64>>,
}

impl SolutionField {
    pub fn new(grid: Grid, label: impl Into<String>, initial: Vec<f64>) -> Result<Self, GridError> {
        let mut out = Self { grid, label: label.into(), slices: Vec::new() };
        out.push(initial)?;
        Ok(out)
    }

    /// Field whose first stored slice is time index `start` (checkpoint restart).
    pub(crate) fn resumed(grid: Grid, label: String, start: usize, slice: Vec<f64>) -> Result<Self, GridError> {
        let mut out = Self { grid, label, slices: alloc::vec![Vec::new(); start] };
        out.push(slice)?;
        Ok(out)
    }

    pub fn push(&mut self, slice: Vec<f64>) -> Result<(), GridError> {
        if slice.len() != self.grid.node_count() {
            return Err(GridError::InvalidParameter("slice length does not match the grid".into()));
        }
        if slice.iter().any(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(self.slices.len()));
        }
        self.slices.push(slice);
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    /// Number of stored time levels (including skipped levels before a restart).
    pub fn len(&self) -> usize {
        self.slices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
    /// Slice at time index `n`; empty for levels skipped by a restart.
    pub fn slice(&self, n: usize) -> &[f64] {
        &self.slices[n]
    }
    pub fn last(&self) -> &[f64] {
        self.slices.last().expect("a field always holds its first slice")
    }
    pub fn slices(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.slices.iter().enumerate().filter(|(_, s)| !s.is_empty()).map(|(n, s)| (n, s.as_slice()))
    }
    /// `max_j |U^n_j|`.
    pub fn sup_norm(&self, n: usize) -> f64 {
        self.slices[n].iter().fold(0.0, |m, v| m.max(abs(*v)))
    }
}
