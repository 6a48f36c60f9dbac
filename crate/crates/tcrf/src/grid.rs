//! Uniform periodic grids on the unit torus `[0,1)^{2n}`.
//!
//! Real coordinates are ordered `x1, y1, x2, y2, ...` with `z^j = x^j + i y^j`.
//! Arrays are row-major with axis 0 slowest and axis `2n-1` contiguous, all
//! axes sharing the same point count `N`. Sums over the grid always run in a
//! fixed order (flat index ascending) with Neumaier compensation, so every
//! reduction is bitwise reproducible.

use crate::error::{Error, Result};

/// Shared shape descriptor for every field in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    /// Complex transverse dimension n.
    pub n: usize,
    /// Points per real axis (N, even, at least 8).
    pub len: usize,
}

impl Grid {
    pub fn new(n: usize, len: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("model.n", "transverse dimension must be at least 1"));
        }
        if len < 8 || len % 2 != 0 {
            return Err(Error::config(
                "model.grid",
                format!("grid must be even and at least 8, got {len}"),
            ));
        }
        let g = Grid { n, len };
        // Guard against overflow and absurd allocations before they happen.
        let mut total: usize = 1;
        for _ in 0..g.axes() {
            total = total
                .checked_mul(len)
                .filter(|&t| t <= 1 << 24)
                .ok_or_else(|| Error::config("model", "grid too large for this model"))?;
        }
        Ok(g)
    }

    /// Number of real axes, 2n.
    #[inline]
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    /// Total number of grid points, N^{2n}.
    #[inline]
    pub fn total(&self) -> usize {
        self.len.pow(self.axes() as u32)
    }

    /// Stride of `axis` in the flat row-major index.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.len.pow((self.axes() - 1 - axis) as u32)
    }

    /// Decompose a flat index into per-axis indices.
    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.axes()];
        for a in (0..self.axes()).rev() {
            c[a] = idx % self.len;
            idx /= self.len;
        }
        c
    }

    /// Compose per-axis indices into a flat index.
    pub fn flat(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for &c in coords {
            idx = idx * self.len + c;
        }
        idx
    }

    /// Coordinates in [0,1) of the grid point with the given flat index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx).iter().map(|&c| c as f64 / self.len as f64).collect()
    }

    /// Largest per-axis mode retained by the 2/3 dealiasing rule.
    #[inline]
    pub fn dealias_cut(&self) -> usize {
        self.len / 3
    }

    /// Signed mode number for slot `m` on one axis: 0..N/2-1, then -N/2..-1.
    #[inline]
    pub fn signed_mode(&self, m: usize) -> i64 {
        if m <= self.len / 2 - 1 {
            m as i64
        } else {
            m as i64 - self.len as i64
        }
    }
}

/// Neumaier-compensated sum in flat-index order. Bitwise deterministic and
/// accurate to O(eps) independent of length.
pub fn comp_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Compensated sum of `f(i)` over `0..len`, same guarantees as `comp_sum`.
pub fn comp_sum_by(len: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for i in 0..len {
        let x = f(i);
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

pub fn mean(xs: &[f64]) -> f64 {
    comp_sum(xs) / xs.len() as f64
}

pub fn sup_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Oscillation max - min.
pub fn osc(xs: &[f64]) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_and_roundtrip() {
        let g = Grid::new(2, 8).unwrap();
        assert_eq!(g.axes(), 4);
        assert_eq!(g.total(), 4096);
        assert_eq!(g.stride(3), 1);
        assert_eq!(g.stride(0), 512);
        for idx in [0usize, 1, 511, 4095, 2048] {
            assert_eq!(g.flat(&g.coords(idx)), idx);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::new(0, 16).is_err());
        assert!(Grid::new(1, 7).is_err());
        assert!(Grid::new(1, 6).is_err());
        assert!(Grid::new(4, 64).is_err());
    }

    #[test]
    fn signed_modes_cover_both_halves() {
        let g = Grid::new(1, 8).unwrap();
        let modes: Vec<i64> = (0..8).map(|m| g.signed_mode(m)).collect();
        assert_eq!(modes, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        // 1 + eps-sized tail that a naive sum loses entirely.
        let mut xs = vec![1.0f64];
        xs.extend(std::iter::repeat(1e-16).take(10_000));
        let exact = 1.0 + 1e-12;
        assert!((comp_sum(&xs) - exact).abs() < 1e-15);
    }

    #[test]
    fn osc_and_norms() {
        let xs = [1.0, -3.0, 2.0];
        assert_eq!(sup_norm(&xs), 3.0);
        assert_eq!(osc(&xs), 5.0);
        assert!((mean(&xs) - 0.0).abs() < 1e-15);
    }
}
