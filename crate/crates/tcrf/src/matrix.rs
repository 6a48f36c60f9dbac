//! Fields of Hermitian n x n matrices over the grid.
//!
//! Storage is component-major: one real array per diagonal entry, one
//! complex array per strict upper entry (row < col, lexicographic), so the
//! lower triangle is implied by conjugation. Eigenvalues and determinants
//! use closed forms for n <= 2; larger n falls back to the real symmetric
//! embedding [[X, -Y], [Y, X]] of g = X + iY, which doubles each eigenvalue
//! and keeps the computation deterministic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Hermitian matrix field; `len` grid points, `n x n` per point.
#[derive(Debug, Clone)]
pub struct HermMatField {
    pub n: usize,
    /// Diagonal entries, n arrays of grid length.
    pub diag: Vec<Vec<f64>>,
    /// Strict upper entries (j, k) with j < k in lexicographic order.
    pub off: Vec<Vec<Complex64>>,
}

/// Index of the (j, k), j < k, entry in `off`.
#[inline]
pub fn off_index(n: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < n);
    j * n - j * (j + 1) / 2 + (k - j - 1)
}

impl HermMatField {
    pub fn zeros(n: usize, len: usize) -> Self {
        HermMatField {
            n,
            diag: (0..n).map(|_| vec![0.0; len]).collect(),
            off: (0..n * (n - 1) / 2).map(|_| vec![Complex64::default(); len]).collect(),
        }
    }

    /// Constant field from one Hermitian matrix (upper triangle read).
    pub fn constant(n: usize, len: usize, m: &DMatrix<Complex64>) -> Self {
        let mut f = Self::zeros(n, len);
        for j in 0..n {
            f.diag[j] = vec![m[(j, j)].re; len];
            for k in j + 1..n {
                f.off[off_index(n, j, k)] = vec![m[(j, k)]; len];
            }
        }
        f
    }

    pub fn len(&self) -> usize {
        self.diag[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full matrix at one grid point.
    pub fn at(&self, idx: usize) -> DMatrix<Complex64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            m[(j, j)] = Complex64::new(self.diag[j][idx], 0.0);
            for k in j + 1..n {
                let v = self.off[off_index(n, j, k)][idx];
                m[(j, k)] = v;
                m[(k, j)] = v.conj();
            }
        }
        m
    }

    pub fn set_at(&mut self, idx: usize, m: &DMatrix<Complex64>) {
        let n = self.n;
        for j in 0..n {
            self.diag[j][idx] = m[(j, j)].re;
            for k in j + 1..n {
                self.off[off_index(n, j, k)][idx] = m[(j, k)];
            }
        }
    }

    /// self += c * other, entrywise.
    pub fn axpy(&mut self, c: f64, other: &HermMatField) {
        for (d, od) in self.diag.iter_mut().zip(other.diag.iter()) {
            for (a, &b) in d.iter_mut().zip(od.iter()) {
                *a += c * b;
            }
        }
        for (d, od) in self.off.iter_mut().zip(other.off.iter()) {
            for (a, &b) in d.iter_mut().zip(od.iter()) {
                *a += c * b;
            }
        }
    }

    /// Grid average as a Hermitian matrix (deterministic compensated mean).
    pub fn mean_matrix(&self) -> DMatrix<Complex64> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            m[(j, j)] = Complex64::new(crate::grid::mean(&self.diag[j]), 0.0);
            for k in j + 1..n {
                let arr = &self.off[off_index(n, j, k)];
                let re = crate::grid::comp_sum_by(arr.len(), |i| arr[i].re) / arr.len() as f64;
                let im = crate::grid::comp_sum_by(arr.len(), |i| arr[i].im) / arr.len() as f64;
                m[(j, k)] = Complex64::new(re, im);
                m[(k, j)] = Complex64::new(re, -im);
            }
        }
        m
    }

    /// Sup norm over points of the entrywise max modulus.
    pub fn sup_norm(&self) -> f64 {
        let mut s = 0.0f64;
        for d in &self.diag {
            s = s.max(crate::grid::sup_norm(d));
        }
        for o in &self.off {
            s = o.iter().fold(s, |m, v| m.max(v.norm()));
        }
        s
    }

    /// Smallest eigenvalue over all grid points.
    pub fn min_eig(&self) -> f64 {
        self.min_eig_argmin().0
    }

    /// Smallest eigenvalue over the grid and the point attaining it.
    pub fn min_eig_argmin(&self) -> (f64, usize) {
        let mut lo = f64::INFINITY;
        let mut at = 0;
        for idx in 0..self.len() {
            let v = self.eig_range_at(idx).0;
            if v < lo {
                lo = v;
                at = idx;
            }
        }
        (lo, at)
    }

    /// (min, max) eigenvalue at one point.
    pub fn eig_range_at(&self, idx: usize) -> (f64, f64) {
        match self.n {
            1 => {
                let v = self.diag[0][idx];
                (v, v)
            }
            2 => {
                let a = self.diag[0][idx];
                let c = self.diag[1][idx];
                let b = self.off[0][idx];
                let m = 0.5 * (a + c);
                let r = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
                (m - r, m + r)
            }
            _ => {
                let eig = hermitian_eigenvalues(&self.at(idx));
                (eig[0], eig[eig.len() - 1])
            }
        }
    }

    /// log det at one point; caller guarantees positive definiteness.
    pub fn log_det_at(&self, idx: usize) -> f64 {
        match self.n {
            1 => self.diag[0][idx].ln(),
            2 => {
                let det = self.diag[0][idx] * self.diag[1][idx] - self.off[0][idx].norm_sqr();
                det.ln()
            }
            _ => hermitian_eigenvalues(&self.at(idx)).iter().map(|l| l.ln()).sum(),
        }
    }
}

/// Real symmetric 2n x 2n embedding of a Hermitian matrix. Its spectrum is
/// the original spectrum with every eigenvalue doubled, and positivity is
/// preserved both ways.
pub(crate) fn embed_hermitian(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut emb = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            emb[(j, k)] = m[(j, k)].re;
            emb[(j + n, k + n)] = m[(j, k)].re;
            emb[(j, k + n)] = -m[(j, k)].im;
            emb[(j + n, k)] = m[(j, k)].im;
        }
    }
    emb
}

/// Smallest eigenvalue of a Hermitian matrix with a unit eigenvector,
/// through the same real embedding as `hermitian_eigenvalues`.
pub fn hermitian_min_eigenpair(m: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(embed_hermitian(m));
    let mut at = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[at] {
            at = i;
        }
    }
    let col = eig.eigenvectors.column(at);
    let mut v = DVector::from_element(n, Complex64::new(0.0, 0.0));
    for j in 0..n {
        v[j] = Complex64::new(col[j], col[j + n]);
    }
    // The embedding eigenvector is unit length, and its complex fold keeps
    // that norm.
    (eig.eigenvalues[at], v)
}

/// Ascending eigenvalues of a Hermitian matrix via the real symmetric
/// embedding; deterministic for a fixed input.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(embed_hermitian(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Each eigenvalue of g appears twice in the embedding.
    vals.into_iter().step_by(2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn herm2(a: f64, c: f64, b: Complex64) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[Complex64::new(a, 0.0), b, b.conj(), Complex64::new(c, 0.0)],
        )
    }

    #[test]
    fn closed_form_matches_embedding() {
        let m = herm2(2.0, 0.5, Complex64::new(0.3, -0.7));
        let mut f = HermMatField::zeros(2, 4);
        f.set_at(1, &m);
        let (lo, hi) = f.eig_range_at(1);
        let emb = hermitian_eigenvalues(&m);
        assert!((lo - emb[0]).abs() < 1e-12);
        assert!((hi - emb[1]).abs() < 1e-12);
        // Trace and determinant identities.
        assert!((lo + hi - 2.5).abs() < 1e-12);
        assert!((lo * hi - (2.0 * 0.5 - m[(0, 1)].norm_sqr())).abs() < 1e-12);
    }

    #[test]
    fn log_det_positive_case() {
        let m = herm2(3.0, 2.0, Complex64::new(0.2, 0.1));
        let mut f = HermMatField::zeros(2, 1);
        f.set_at(0, &m);
        let det = 3.0 * 2.0 - m[(0, 1)].norm_sqr();
        assert!((f.log_det_at(0) - det.ln()).abs() < 1e-14);
    }

    #[test]
    fn mean_and_axpy() {
        let mut f = HermMatField::zeros(1, 4);
        f.diag[0] = vec![1.0, 2.0, 3.0, 4.0];
        let g = f.clone();
        f.axpy(0.5, &g);
        assert_eq!(f.diag[0], vec![1.5, 3.0, 4.5, 6.0]);
        assert!((f.mean_matrix()[(0, 0)].re - 3.75).abs() < 1e-15);
    }

    #[test]
    fn constant_roundtrip() {
        let m = herm2(1.0, 2.0, Complex64::new(-0.4, 0.25));
        let f = HermMatField::constant(2, 3, &m);
        assert_eq!(f.at(2), m);
    }
}
