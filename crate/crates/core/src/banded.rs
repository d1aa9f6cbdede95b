//! Banded LU factorisation without pivoting, for the diagonally dominant
//! M-matrices of the implicit stage.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row `i` holds columns `i - kl ..= i + ku`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub(crate) fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    /// In-place LU factorisation; fails on a non-positive pivot.
    pub(crate) fn factor(mut self) -> Option<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if !(pivot > 0.0) {
                return None;
            }
            for i in k + 1..=(k + kl).min(n - 1) {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=(k + ku).min(n - 1) {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * self.data[skj];
                }
            }
        }
        Some(BandLu { m: self })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub(crate) fn solve(&self, rhs: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        for i in 0..n {
            let mut s = rhs[i];
            for j in i.saturating_sub(m.kl)..i {
                s -= m.data[m.slot(i, j)] * rhs[j];
            }
            rhs[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for j in i + 1..=(i + m.ku).min(n - 1) {
                s -= m.data[m.slot(i, j)] * rhs[j];
            }
            rhs[i] = s / m.data[m.slot(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_dominant_band_system() {
        let n = 40;
        let mut a = BandMatrix::zeros(n, 3, 2);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(3)..=(i + 2).min(n - 1) {
                let v = if i == j { 10.0 } else { -0.3 * ((i + 2 * j) % 5) as f64 / 4.0 };
                a.add(i, j, v);
                dense[i][j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x[j]).sum()).collect();
        a.factor().unwrap().solve(&mut b);
        for i in 0..n {
            assert!((b[i] - x[i]).abs() < 1e-13);
        }
    }
}
