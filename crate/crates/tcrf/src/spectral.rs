//! Spectral calculus on the periodic grid: compact dealiased spectra,
//! complex Hessians, Laplacian and Poisson multipliers, and full-grid
//! Dolbeault derivatives.
//!
//! A real field is represented in the hot paths by its "compact spectrum":
//! the raw DFT coefficients at the slots that survive the 2/3-rule
//! (|mode| <= N/3 on every axis, Nyquist never kept). All products of two
//! kept modes stay below N, so pointwise products of reconstructed fields
//! alias only into modes the next projection discards.
//!
//! Conventions, fixed once here and relied on everywhere:
//!   d/dz^j   = (d/dx^j - i d/dy^j)/2, multiplier p_j = (b_j + i a_j)/2
//!   d/dzbar^j = conj counterpart,     multiplier q_j = -conj(p_j)
//! with a_j = 2 pi m(axis 2j), b_j = 2 pi m(axis 2j+1). The Hessian entry
//! H_{jk} = d^2/dz^j dzbar^k then has multiplier -p_j conj(p_k), and the
//! complex Laplacian (trace) multiplier is -sum |p_j|^2 = -|k|^2/4.
//!
//! The scatter buffer `stage` is zeroed once at construction; every use
//! overwrites exactly the kept slots and the inverse transform reads it
//! without writing, so slots outside the dealias support stay zero for the
//! lifetime of the object.

use num_complex::Complex64;
use std::cell::RefCell;
use std::f64::consts::TAU;

use crate::fft::Fft;
use crate::grid::Grid;
use crate::matrix::HermMatField;

pub struct SpectralOps {
    grid: Grid,
    fft: Fft,
    /// 2 pi x signed mode per slot; Nyquist slot zeroed.
    dtab: Vec<f64>,
    /// Flat spectral slots kept by the 2/3 rule, ascending; kept[0] is k=0.
    kept: Vec<usize>,
    /// Inverse map: full slot -> kept position, u32::MAX when dropped.
    kept_pos: Vec<u32>,
    pj: Vec<Vec<Complex64>>,
    diag_mul: Vec<Vec<f64>>,
    /// Strict upper pairs (j,k), j<k, same order as HermMatField::off.
    off_mul: Vec<Vec<Complex64>>,
    trace_mul: Vec<f64>,
    inv_trace: Vec<f64>,
    stage: RefCell<Vec<Complex64>>,
    wa: RefCell<Vec<Complex64>>,
    wb: RefCell<Vec<Complex64>>,
}

impl SpectralOps {
    pub fn new(grid: Grid) -> Self {
        let len = grid.len;
        let total = grid.total();
        let cut = grid.dealias_cut() as i64;
        let mut dtab = vec![0.0; len];
        for (m, d) in dtab.iter_mut().enumerate() {
            if m != len / 2 {
                *d = TAU * grid.signed_mode(m) as f64;
            }
        }
        let axes = grid.axes();
        let mut kept = Vec::new();
        let mut kept_pos = vec![u32::MAX; total];
        let mut coords = vec![0usize; axes];
        for slot in 0..total {
            if coords.iter().all(|&c| grid.signed_mode(c).abs() <= cut) {
                kept_pos[slot] = kept.len() as u32;
                kept.push(slot);
            }
            for a in (0..axes).rev() {
                coords[a] += 1;
                if coords[a] < len {
                    break;
                }
                coords[a] = 0;
            }
        }
        let n = grid.n;
        let nk = kept.len();
        let mut pj = vec![vec![Complex64::default(); nk]; n];
        let mut diag_mul = vec![vec![0.0; nk]; n];
        let mut off_mul = vec![vec![Complex64::default(); nk]; n * (n - 1) / 2];
        let mut trace_mul = vec![0.0; nk];
        for (t, &slot) in kept.iter().enumerate() {
            for j in 0..n {
                let a = dtab[(slot / grid.stride(2 * j)) % len];
                let b = dtab[(slot / grid.stride(2 * j + 1)) % len];
                pj[j][t] = Complex64::new(b, a) * 0.5;
            }
            let mut pair = 0;
            for j in 0..n {
                diag_mul[j][t] = -pj[j][t].norm_sqr();
                trace_mul[t] += diag_mul[j][t];
                for k in j + 1..n {
                    off_mul[pair][t] = -pj[j][t] * pj[k][t].conj();
                    pair += 1;
                }
            }
        }
        let mut inv_trace = vec![0.0; nk];
        for t in 1..nk {
            inv_trace[t] = 1.0 / trace_mul[t];
        }
        let fft = Fft::new(grid);
        SpectralOps {
            grid,
            fft,
            dtab,
            kept,
            kept_pos,
            pj,
            diag_mul,
            off_mul,
            trace_mul,
            inv_trace,
            stage: RefCell::new(vec![Complex64::default(); total]),
            wa: RefCell::new(vec![Complex64::default(); total]),
            wb: RefCell::new(vec![Complex64::default(); total]),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    pub fn zero_spectrum(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.kept.len()]
    }

    pub fn is_zero(spec: &[Complex64]) -> bool {
        spec.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }

    /// Grid mean encoded in the k=0 slot of a raw-coefficient spectrum.
    pub fn mean_value(&self, spec: &[Complex64]) -> f64 {
        spec[0].re / self.grid.total() as f64
    }

    /// Signed mode vector (one entry per real axis) of kept entry t.
    pub fn mode_at(&self, t: usize) -> Vec<i64> {
        self.grid.coords(self.kept[t]).iter().map(|&c| self.grid.signed_mode(c)).collect()
    }

    /// Kept position of the slot whose per-axis modes are `modes`, if kept.
    pub fn position_of_modes(&self, modes: &[i64]) -> Option<usize> {
        let len = self.grid.len as i64;
        let coords: Vec<usize> =
            modes.iter().map(|&m| (m.rem_euclid(len)) as usize).collect();
        let pos = self.kept_pos[self.grid.flat(&coords)];
        (pos != u32::MAX).then_some(pos as usize)
    }

    pub fn dz_multiplier(&self, t: usize, j: usize) -> Complex64 {
        self.pj[j][t]
    }

    /// Symbol of the mixed derivative d^2/dz_j dzbar_k at kept slot t.
    pub fn hessian_multiplier(&self, t: usize, j: usize, k: usize) -> Complex64 {
        -self.pj[j][t] * self.pj[k][t].conj()
    }

    /// Kept position of the negated mode vector; the kept set is symmetric,
    /// so this always exists.
    pub fn neg_position(&self, t: usize) -> usize {
        let m: Vec<i64> = self.mode_at(t).iter().map(|&v| -v).collect();
        self.position_of_modes(&m).expect("kept set is symmetric under negation")
    }

    /// Raw DFT coefficients of a real field at the kept slots.
    pub fn forward(&self, field: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(field.len(), self.grid.total());
        debug_assert_eq!(out.len(), self.kept.len());
        let mut wa = self.wa.borrow_mut();
        let mut wb = self.wb.borrow_mut();
        for (w, &v) in wa.iter_mut().zip(field.iter()) {
            *w = Complex64::new(v, 0.0);
        }
        self.fft.forward(&mut wa, &mut wb);
        for (o, &slot) in out.iter_mut().zip(self.kept.iter()) {
            *o = wa[slot];
        }
    }

    /// Scatter kept slots, inverse transform, stream the field out.
    fn staged(&self, fill: impl Fn(usize) -> Complex64, mut sink: impl FnMut(usize, Complex64)) {
        {
            let mut st = self.stage.borrow_mut();
            for (t, &slot) in self.kept.iter().enumerate() {
                st[slot] = fill(t);
            }
        }
        let st = self.stage.borrow();
        let mut wa = self.wa.borrow_mut();
        let mut wb = self.wb.borrow_mut();
        self.fft.inverse_from(&st, &mut wa, &mut wb);
        for (i, &v) in wb.iter().enumerate() {
            sink(i, v);
        }
    }

    pub fn inverse_real(&self, spec: &[Complex64], out: &mut [f64]) {
        if Self::is_zero(spec) {
            out.fill(0.0);
            return;
        }
        self.staged(|t| spec[t], |i, v| out[i] = v.re);
    }

    pub fn inverse_complex(&self, spec: &[Complex64], out: &mut [Complex64]) {
        if Self::is_zero(spec) {
            out.fill(Complex64::default());
            return;
        }
        self.staged(|t| spec[t], |i, v| out[i] = v);
    }

    /// Complex Hessian H_{jk} = d^2 phi / dz^j dzbar^k of a real potential.
    /// Diagonal entries are real fields, so two of them ride one inverse
    /// transform as real and imaginary parts.
    pub fn hessian(&self, spec: &[Complex64], out: &mut HermMatField) {
        let n = self.grid.n;
        if Self::is_zero(spec) {
            for d in out.diag.iter_mut() {
                d.fill(0.0);
            }
            for o in out.off.iter_mut() {
                o.fill(Complex64::default());
            }
            return;
        }
        let mut j = 0;
        while j < n {
            if j + 1 < n {
                let (ma, mb) = (&self.diag_mul[j], &self.diag_mul[j + 1]);
                let (da, db) = {
                    let mut it = out.diag[j..].iter_mut();
                    (it.next().unwrap(), it.next().unwrap())
                };
                self.staged(
                    |t| Complex64::new(ma[t], mb[t]) * spec[t],
                    |i, v| {
                        da[i] = v.re;
                        db[i] = v.im;
                    },
                );
                j += 2;
            } else {
                let m = &self.diag_mul[j];
                let d = &mut out.diag[j];
                self.staged(|t| m[t] * spec[t], |i, v| d[i] = v.re);
                j += 1;
            }
        }
        for (pair, mul) in self.off_mul.iter().enumerate() {
            let o = &mut out.off[pair];
            self.staged(|t| mul[t] * spec[t], |i, v| o[i] = v);
        }
    }

    /// Trace of the Hessian: the quarter-Laplacian sum_j d^2/dz^j dzbar^j.
    pub fn laplacian_trace(&self, spec: &[Complex64], out: &mut [f64]) {
        if Self::is_zero(spec) {
            out.fill(0.0);
            return;
        }
        let m = &self.trace_mul;
        self.staged(|t| m[t] * spec[t], |i, v| out[i] = v.re);
    }

    /// Spectrum of the mean-zero psi with trace(Hessian psi) = field of rhs.
    pub fn poisson_trace(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        rhs.iter().zip(self.inv_trace.iter()).map(|(&r, &w)| r * w).collect()
    }

    /// Largest |trace multiplier| over kept slots; the stiffness scale used
    /// by step-size control.
    pub fn max_symbol(&self) -> f64 {
        self.trace_mul.iter().fold(0.0f64, |m, &v| m.max(-v))
    }

    /// Dealias + Nyquist projection of a real field, in place.
    pub fn project_field(&self, field: &mut [f64]) {
        let mut spec = self.zero_spectrum();
        self.forward(field, &mut spec);
        self.inverse_real(&spec, field);
    }

    /// Dealias + Nyquist projection of a complex field, in place.
    pub fn project_complex(&self, field: &mut [Complex64]) {
        let mut part: Vec<f64> = field.iter().map(|z| z.re).collect();
        self.project_field(&mut part);
        for (z, r) in field.iter_mut().zip(&part) {
            z.re = *r;
        }
        for (p, z) in part.iter_mut().zip(field.iter()) {
            *p = z.im;
        }
        self.project_field(&mut part);
        for (z, r) in field.iter_mut().zip(&part) {
            z.im = *r;
        }
    }

    fn derivative_full(&self, f: &[Complex64], j: usize, bar: bool) -> Vec<Complex64> {
        let mut wa = self.wa.borrow_mut();
        let mut wb = self.wb.borrow_mut();
        wa.copy_from_slice(f);
        self.fft.forward(&mut wa, &mut wb);
        let len = self.grid.len;
        let (sx, sy) = (self.grid.stride(2 * j), self.grid.stride(2 * j + 1));
        for (slot, v) in wa.iter_mut().enumerate() {
            let a = self.dtab[(slot / sx) % len];
            let b = self.dtab[(slot / sy) % len];
            let p = if bar {
                Complex64::new(-b, a) * 0.5
            } else {
                Complex64::new(b, a) * 0.5
            };
            *v *= p;
        }
        self.fft.inverse(&mut wa, &mut wb);
        wa.to_vec()
    }

    /// d/dz^j of a complex field, exact on band-limited data (full grid,
    /// no dealiasing beyond the zeroed Nyquist line).
    pub fn dz_full(&self, f: &[Complex64], j: usize) -> Vec<Complex64> {
        self.derivative_full(f, j, false)
    }

    /// d/dzbar^j of a complex field.
    pub fn dzbar_full(&self, f: &[Complex64], j: usize) -> Vec<Complex64> {
        self.derivative_full(f, j, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops(n: usize, len: usize) -> SpectralOps {
        SpectralOps::new(Grid::new(n, len).unwrap())
    }

    fn cosine_field(ops: &SpectralOps, axis: usize, mode: f64, amp: f64) -> Vec<f64> {
        let g = ops.grid();
        (0..g.total()).map(|i| amp * (TAU * mode * g.point(i)[axis]).cos()).collect()
    }

    #[test]
    fn hessian_matches_quarter_laplacian_n1() {
        // phi = cos(2 pi x): H_00 = Lap/4 = -pi^2 cos(2 pi x).
        let s = ops(1, 32);
        let g = s.grid();
        let field = cosine_field(&s, 0, 1.0, 1.0);
        let mut spec = s.zero_spectrum();
        s.forward(&field, &mut spec);
        let mut h = HermMatField::zeros(1, g.total());
        s.hessian(&spec, &mut h);
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        for i in 0..g.total() {
            let want = -pi2 * (TAU * g.point(i)[0]).cos();
            assert!((h.diag[0][i] - want).abs() < 1e-10, "point {i}");
        }
    }

    #[test]
    fn hessian_cross_term_n2() {
        // phi = cos(2 pi x1) cos(2 pi y2): H_01 = i pi^2 sin(2 pi x1) sin(2 pi y2).
        let s = ops(2, 16);
        let g = s.grid();
        let field: Vec<f64> = (0..g.total())
            .map(|i| {
                let p = g.point(i);
                (TAU * p[0]).cos() * (TAU * p[3]).cos()
            })
            .collect();
        let mut spec = s.zero_spectrum();
        s.forward(&field, &mut spec);
        let mut h = HermMatField::zeros(2, g.total());
        s.hessian(&spec, &mut h);
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        for i in 0..g.total() {
            let p = g.point(i);
            let c = (TAU * p[0]).cos() * (TAU * p[3]).cos();
            let want_diag = -pi2 * c;
            assert!((h.diag[0][i] - want_diag).abs() < 1e-10);
            assert!((h.diag[1][i] - want_diag).abs() < 1e-10);
            let want_off = Complex64::new(0.0, pi2 * (TAU * p[0]).sin() * (TAU * p[3]).sin());
            assert!((h.off[0][i] - want_off).norm() < 1e-10, "off at {i}");
        }
    }

    #[test]
    fn packed_diagonal_matches_single_transforms() {
        // The re/im packing of two diagonal entries must agree with running
        // each multiplier through its own inverse transform.
        let s = ops(2, 8);
        let g = s.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let field: Vec<f64> = (0..g.total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut spec = s.zero_spectrum();
        s.forward(&field, &mut spec);
        let mut h = HermMatField::zeros(2, g.total());
        s.hessian(&spec, &mut h);
        for j in 0..2 {
            let single: Vec<Complex64> =
                (0..s.kept_count()).map(|t| s.diag_mul[j][t] * spec[t]).collect();
            let mut out = vec![0.0; g.total()];
            s.inverse_real(&single, &mut out);
            for i in 0..g.total() {
                assert!((out[i] - h.diag[j][i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dealias_drops_high_modes_and_keeps_low() {
        let s = ops(1, 32);
        let g = s.grid();
        let cut = g.dealias_cut() as f64;
        let keep = cosine_field(&s, 0, cut, 1.0);
        let drop = cosine_field(&s, 0, cut + 1.0, 1.0);
        let mixed: Vec<f64> = keep.iter().zip(drop.iter()).map(|(a, b)| a + b).collect();
        let mut out = mixed.clone();
        s.project_field(&mut out);
        for i in 0..g.total() {
            assert!((out[i] - keep[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_inverts_laplacian_trace() {
        let s = ops(2, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut psi = s.zero_spectrum();
        for v in psi.iter_mut().skip(1) {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let tau: Vec<Complex64> =
            (0..s.kept_count()).map(|t| psi[t] * s.trace_mul[t]).collect();
        let back = s.poisson_trace(&tau);
        for (a, b) in back.iter().zip(psi.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dz_matches_analytic_and_fd_converges_at_order_four() {
        // f = cos(2 pi x): df/dz = -pi sin(2 pi x) since the y-slot is empty.
        let pi = std::f64::consts::PI;
        let mut fd_errs = Vec::new();
        for len in [32usize, 64] {
            let s = ops(1, len);
            let g = s.grid();
            let f: Vec<Complex64> = (0..g.total())
                .map(|i| Complex64::new((TAU * g.point(i)[0]).cos(), 0.0))
                .collect();
            let d = s.dz_full(&f, 0);
            let mut spectral_err = 0.0f64;
            for i in 0..g.total() {
                let want = -pi * (TAU * g.point(i)[0]).sin();
                spectral_err = spectral_err.max((d[i].re - want).abs().max(d[i].im.abs()));
            }
            assert!(spectral_err < 1e-10, "N={len}: spectral error {spectral_err}");

            // 4th-order central difference of the same samples along x.
            let h = 1.0 / len as f64;
            let mut fd_err = 0.0f64;
            for i in 0..g.total() {
                let c = g.coords(i);
                let at = |dx: i64| {
                    let mut cc = c.clone();
                    cc[0] = (c[0] as i64 + dx).rem_euclid(len as i64) as usize;
                    f[g.flat(&cc)].re
                };
                let fd = (8.0 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12.0 * h);
                fd_err = fd_err.max((0.5 * fd - d[i].re).abs());
            }
            // Truncation bound h^4 |f^(5)| / 30 for the x-derivative, halved
            // by the d/dz factor.
            let bound = 0.5 * h.powi(4) * TAU.powi(5) / 30.0;
            assert!(fd_err < 1.1 * bound, "N={len}: fd error {fd_err} vs bound {bound}");
            fd_errs.push(fd_err);
        }
        let ratio = fd_errs[0] / fd_errs[1];
        assert!((14.0..18.0).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn dzbar_is_conjugate_on_real_fields() {
        let s = ops(2, 8);
        let g = s.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut f: Vec<f64> = (0..g.total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.project_field(&mut f);
        let fc: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for j in 0..2 {
            let dz = s.dz_full(&fc, j);
            let dzb = s.dzbar_full(&fc, j);
            for (a, b) in dz.iter().zip(dzb.iter()) {
                assert!((a.conj() - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_and_mode_bookkeeping() {
        let s = ops(1, 16);
        let g = s.grid();
        let field: Vec<f64> = (0..g.total()).map(|i| 0.75 + (TAU * g.point(i)[0]).cos()).collect();
        let mut spec = s.zero_spectrum();
        s.forward(&field, &mut spec);
        assert!((s.mean_value(&spec) - 0.75).abs() < 1e-12);
        assert_eq!(s.mode_at(0), vec![0, 0]);
        let pos = s.position_of_modes(&[1, 0]).unwrap();
        assert!((spec[pos].re - g.total() as f64 * 0.5).abs() < 1e-9);
        assert!(s.position_of_modes(&[(g.dealias_cut() + 1) as i64, 0]).is_none());
    }

    #[test]
    fn zero_spectrum_fast_paths_agree_with_transforms() {
        let s = ops(1, 16);
        let spec = s.zero_spectrum();
        let mut out = vec![1.0; s.grid().total()];
        s.inverse_real(&spec, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
        let mut h = HermMatField::zeros(1, s.grid().total());
        h.diag[0].fill(3.0);
        s.hessian(&spec, &mut h);
        assert!(h.diag[0].iter().all(|&v| v == 0.0));
    }
}
