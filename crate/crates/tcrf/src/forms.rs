//! Graded (p,q)-forms on the transverse model and their calculus: wedge
//! products, the Dolbeault operators, integration against the constant leaf
//! weight, and holonomy pullback.
//!
//! A form is stored by bidegree part; each part holds one complex grid field
//! per pair of strictly increasing multi-indices (I in dz, J in dzbar), lex
//! ordered. The convention i dz wedge dzbar = 2 dx wedge dy fixes all
//! integral normalizations.

use num_complex::Complex64;
use std::collections::BTreeMap;

use crate::grid::comp_sum_by;
use crate::holonomy::minor_det;
use crate::matrix::{off_index, HermMatField};
use crate::model::TransverseModel;
use crate::spectral::SpectralOps;

/// Strictly increasing k-subsets of {0, ..., n-1} in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        // Advance the rightmost index that can still move.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] + (k - i) <= n - 1 {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn subset_rank(n: usize, set: &[usize]) -> usize {
    subsets(n, set.len()).iter().position(|s| s == set).expect("subset of range")
}

/// Union of two sorted disjoint index sets with the sign of the merge
/// permutation; None if they overlap.
fn merge(a: &[usize], b: &[usize]) -> Option<(f64, Vec<usize>)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut sign = 1.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            // b[j] hops over the remaining elements of a.
            if (a.len() - i) % 2 == 1 {
                sign = -sign;
            }
            out.push(b[j]);
            j += 1;
        } else {
            return None;
        }
    }
    Some((sign, out))
}

#[derive(Clone)]
pub struct Form {
    pub n: usize,
    total: usize,
    parts: BTreeMap<(usize, usize), Vec<Vec<Complex64>>>,
}

impl Form {
    pub fn zero(n: usize, total: usize) -> Self {
        Form { n, total, parts: BTreeMap::new() }
    }

    /// A function as a (0,0)-form.
    pub fn scalar(n: usize, field: &[f64]) -> Self {
        let comp = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut f = Form::zero(n, field.len());
        f.parts.insert((0, 0), vec![comp]);
        f
    }

    /// The real (1,1)-form i h_{jk} dz^j wedge dzbar^k of a Hermitian
    /// coefficient field.
    pub fn one_one(h: &HermMatField) -> Self {
        let n = h.n;
        let total = h.len();
        let i = Complex64::new(0.0, 1.0);
        let mut comps = vec![vec![Complex64::default(); total]; n * n];
        for j in 0..n {
            for k in 0..n {
                let c = &mut comps[j * n + k];
                if j == k {
                    for (t, v) in c.iter_mut().enumerate() {
                        *v = i * h.diag[j][t];
                    }
                } else {
                    let (a, b) = (j.min(k), j.max(k));
                    let o = &h.off[off_index(n, a, b)];
                    for (t, v) in c.iter_mut().enumerate() {
                        let z = if j < k { o[t] } else { o[t].conj() };
                        *v = i * z;
                    }
                }
            }
        }
        let mut f = Form::zero(n, total);
        f.parts.insert((1, 1), comps);
        f
    }

    /// Inverse of `one_one`: reads the Hermitian coefficients back out of a
    /// (1,1) part. The skew part (defect from Hermitian-ness after dividing
    /// by i) is returned alongside.
    pub fn hermitian_coefficients(&self) -> (HermMatField, f64) {
        let n = self.n;
        let mut h = HermMatField::zeros(n, self.total);
        let mut defect = 0.0f64;
        if let Some(comps) = self.parts.get(&(1, 1)) {
            let mi = Complex64::new(0.0, -1.0);
            for j in 0..n {
                for t in 0..self.total {
                    let g = mi * comps[j * n + j][t];
                    h.diag[j][t] = g.re;
                    defect = defect.max(g.im.abs());
                }
                for k in j + 1..n {
                    let o = off_index(n, j, k);
                    for t in 0..self.total {
                        let a = mi * comps[j * n + k][t];
                        let b = mi * comps[k * n + j][t];
                        h.off[o][t] = 0.5 * (a + b.conj());
                        defect = defect.max((a - b.conj()).norm() * 0.5);
                    }
                }
            }
        }
        (h, defect)
    }

    pub fn total_points(&self) -> usize {
        self.total
    }

    pub fn bidegrees(&self) -> Vec<(usize, usize)> {
        self.parts.keys().copied().collect()
    }

    /// Total degree when homogeneous.
    pub fn degree(&self) -> Option<usize> {
        let mut d = None;
        for (p, q) in self.parts.keys() {
            match d {
                None => d = Some(p + q),
                Some(v) if v == p + q => {}
                _ => return None,
            }
        }
        d.or(Some(0))
    }

    pub fn component(&self, p: usize, q: usize, idx: usize) -> Option<&[Complex64]> {
        self.parts.get(&(p, q)).map(|c| c[idx].as_slice())
    }

    pub fn set_component(&mut self, p: usize, q: usize, idx: usize, field: Vec<Complex64>) {
        debug_assert_eq!(field.len(), self.total);
        let nc = subsets(self.n, p).len() * subsets(self.n, q).len();
        let comps = self
            .parts
            .entry((p, q))
            .or_insert_with(|| vec![vec![Complex64::default(); field.len()]; nc]);
        comps[idx] = field;
    }

    pub fn add_scaled(&mut self, other: &Form, c: Complex64) {
        for (&(p, q), comps) in &other.parts {
            let nc = comps.len();
            let mine = self
                .parts
                .entry((p, q))
                .or_insert_with(|| vec![vec![Complex64::default(); other.total]; nc]);
            for (m, o) in mine.iter_mut().zip(comps) {
                for (a, b) in m.iter_mut().zip(o) {
                    *a += c * b;
                }
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        let mut s = 0.0f64;
        for comps in self.parts.values() {
            for c in comps {
                for v in c {
                    s = s.max(v.norm());
                }
            }
        }
        s
    }

    /// Complex conjugate; swaps bidegrees (p,q) -> (q,p) with the reordering
    /// sign (-1)^{pq}.
    pub fn conj(&self) -> Form {
        let mut out = Form::zero(self.n, self.total);
        for (&(p, q), comps) in &self.parts {
            let si = subsets(self.n, p);
            let sj = subsets(self.n, q);
            let sign = if (p * q) % 2 == 1 { -1.0 } else { 1.0 };
            let mut new = vec![vec![Complex64::default(); self.total]; sj.len() * si.len()];
            for (ii, i_set) in si.iter().enumerate() {
                for (jj, j_set) in sj.iter().enumerate() {
                    let src = &comps[ii * sj.len() + jj];
                    let dst = &mut new[jj * si.len() + ii];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = sign * s.conj();
                    }
                    let _ = (i_set, j_set);
                }
            }
            out.parts.insert((q, p), new);
        }
        out
    }

    /// Sup distance from being a real form.
    pub fn realness_defect(&self) -> f64 {
        let mut diff = self.clone();
        diff.add_scaled(&self.conj(), Complex64::new(-1.0, 0.0));
        diff.sup_norm()
    }

    pub fn wedge(&self, other: &Form) -> Form {
        let n = self.n;
        let mut out = Form::zero(n, self.total);
        for (&(p1, q1), comps1) in &self.parts {
            let si1 = subsets(n, p1);
            let sj1 = subsets(n, q1);
            for (&(p2, q2), comps2) in &other.parts {
                let (p, q) = (p1 + p2, q1 + q2);
                if p > n || q > n {
                    continue;
                }
                let si2 = subsets(n, p2);
                let sj2 = subsets(n, q2);
                let sjn = subsets(n, q).len();
                // Moving the dzbar block of the left factor past the dz
                // block of the right factor costs (-1)^{q1 p2}.
                let block = if (q1 * p2) % 2 == 1 { -1.0 } else { 1.0 };
                for (ii1, i1) in si1.iter().enumerate() {
                    for (ii2, i2) in si2.iter().enumerate() {
                        let Some((s_i, i_u)) = merge(i1, i2) else { continue };
                        let oi = subset_rank(n, &i_u);
                        for (jj1, j1) in sj1.iter().enumerate() {
                            for (jj2, j2) in sj2.iter().enumerate() {
                                let Some((s_j, j_u)) = merge(j1, j2) else { continue };
                                let oj = subset_rank(n, &j_u);
                                let sign = block * s_i * s_j;
                                let a = &comps1[ii1 * sj1.len() + jj1];
                                let b = &comps2[ii2 * sj2.len() + jj2];
                                let nc = subsets(n, p).len() * sjn;
                                let dst = out
                                    .parts
                                    .entry((p, q))
                                    .or_insert_with(|| vec![vec![Complex64::default(); self.total]; nc]);
                                let d = &mut dst[oi * sjn + oj];
                                for t in 0..self.total {
                                    d[t] += sign * a[t] * b[t];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Holomorphic Dolbeault operator: raises bidegree by (1,0).
    pub fn del(&self, ops: &SpectralOps) -> Form {
        self.dolbeault(ops, false)
    }

    /// Antiholomorphic Dolbeault operator: raises bidegree by (0,1).
    pub fn delbar(&self, ops: &SpectralOps) -> Form {
        self.dolbeault(ops, true)
    }

    /// d = del + delbar.
    pub fn exterior(&self, ops: &SpectralOps) -> Form {
        let mut d = self.del(ops);
        d.add_scaled(&self.delbar(ops), Complex64::new(1.0, 0.0));
        d
    }

    fn dolbeault(&self, ops: &SpectralOps, bar: bool) -> Form {
        let n = self.n;
        let mut out = Form::zero(n, self.total);
        for (&(p, q), comps) in &self.parts {
            if (!bar && p == n) || (bar && q == n) {
                continue;
            }
            let si = subsets(n, p);
            let sj = subsets(n, q);
            let (tp, tq) = if bar { (p, q + 1) } else { (p + 1, q) };
            let tj_len = subsets(n, tq).len();
            let nc = subsets(n, tp).len() * tj_len;
            for (ii, i_set) in si.iter().enumerate() {
                for (jj, j_set) in sj.iter().enumerate() {
                    let src = &comps[ii * sj.len() + jj];
                    let moved = if bar { j_set } else { i_set };
                    for a in 0..n {
                        if moved.contains(&a) {
                            continue;
                        }
                        // dz_a (or dzbar_a) slots in front and walks past the
                        // smaller indices of its own block; dzbar additionally
                        // crosses the whole dz block.
                        let mut sign = if moved.iter().filter(|&&v| v < a).count() % 2 == 1 {
                            -1.0
                        } else {
                            1.0
                        };
                        if bar && p % 2 == 1 {
                            sign = -sign;
                        }
                        let deriv =
                            if bar { ops.dzbar_full(src, a) } else { ops.dz_full(src, a) };
                        let mut new_set = moved.to_vec();
                        new_set.push(a);
                        new_set.sort_unstable();
                        let (oi, oj) = if bar {
                            (ii, subset_rank(n, &new_set))
                        } else {
                            (subset_rank(n, &new_set), jj)
                        };
                        let dst = out
                            .parts
                            .entry((tp, tq))
                            .or_insert_with(|| vec![vec![Complex64::default(); self.total]; nc]);
                        let d = &mut dst[oi * tj_len + oj];
                        for (t, v) in deriv.iter().enumerate() {
                            d[t] += sign * v;
                        }
                    }
                }
            }
        }
        out
    }

    /// Integral over the model: leaf volume times the transverse integral of
    /// the (n,n) part. Lower-degree parts integrate to zero.
    pub fn integrate(&self, leaf_volume: f64) -> Complex64 {
        let n = self.n;
        let Some(comps) = self.parts.get(&(n, n)) else {
            return Complex64::default();
        };
        let field = &comps[0];
        // dz_1..dz_n wedge dzbar_1..dzbar_n = (-2i)^n (-1)^{n(n-1)/2} vol.
        let mut factor = Complex64::new(1.0, 0.0);
        for _ in 0..n {
            factor *= Complex64::new(0.0, -2.0);
        }
        if (n * (n - 1) / 2) % 2 == 1 {
            factor = -factor;
        }
        let inv = 1.0 / self.total as f64;
        let re = comp_sum_by(self.total, |t| field[t].re) * inv;
        let im = comp_sum_by(self.total, |t| field[t].im) * inv;
        Complex64::new(re, im) * factor * leaf_volume
    }

    /// Pullback along group element `gi` of the model.
    pub fn pullback(&self, model: &TransverseModel, gi: usize) -> Form {
        let n = self.n;
        let perm = model.permutation(gi);
        let uc = model.u_complex_of(gi);
        let mut out = Form::zero(n, self.total);
        for (&(p, q), comps) in &self.parts {
            let si = subsets(n, p);
            let sj = subsets(n, q);
            let mut new = vec![vec![Complex64::default(); self.total]; comps.len()];
            for (ii_t, i_t) in si.iter().enumerate() {
                for (ii_s, i_s) in si.iter().enumerate() {
                    let di = minor_det(uc, n, i_s, i_t);
                    if di.norm() == 0.0 {
                        continue;
                    }
                    for (jj_t, j_t) in sj.iter().enumerate() {
                        for (jj_s, j_s) in sj.iter().enumerate() {
                            let dj = minor_det(uc, n, j_s, j_t).conj();
                            let w = di * dj;
                            if w.norm() == 0.0 {
                                continue;
                            }
                            let src = &comps[ii_s * sj.len() + jj_s];
                            let dst = &mut new[ii_t * sj.len() + jj_t];
                            for t in 0..self.total {
                                dst[t] += w * src[perm[t] as usize];
                            }
                        }
                    }
                }
            }
            out.parts.insert((p, q), new);
        }
        out
    }

    /// Holonomy average in place; returns the sup defect from invariance.
    pub fn project_basic(&mut self, model: &TransverseModel) -> f64 {
        if model.is_trivial_group() {
            return 0.0;
        }
        let mut avg = self.clone();
        for gi in 1..model.group_order() {
            avg.add_scaled(&self.pullback(model, gi), Complex64::new(1.0, 0.0));
        }
        let inv = 1.0 / model.group_order() as f64;
        for comps in avg.parts.values_mut() {
            for c in comps {
                for v in c.iter_mut() {
                    *v *= inv;
                }
            }
        }
        let mut diff = self.clone();
        diff.add_scaled(&avg, Complex64::new(-1.0, 0.0));
        *self = avg;
        diff.sup_norm()
    }

    /// Sup over the group of the pullback defect.
    pub fn basic_defect(&self, model: &TransverseModel) -> f64 {
        let mut d = 0.0f64;
        for gi in 1..model.group_order() {
            let mut diff = self.pullback(model, gi);
            diff.add_scaled(self, Complex64::new(-1.0, 0.0));
            d = d.max(diff.sup_norm());
        }
        d
    }
}

/// Residual of the integration-by-parts identity for d against the constant
/// leaf weight: |int d(alpha) wedge beta - (-1)^{deg alpha + 1} int alpha
/// wedge d(beta)|, all scaled by leaf volume. Requires homogeneous alpha with
/// deg alpha + deg beta = 2n - 1.
pub fn check_integration_by_parts(
    alpha: &Form,
    beta: &Form,
    ops: &SpectralOps,
    leaf_volume: f64,
) -> f64 {
    let da = alpha.degree().expect("alpha must have homogeneous degree");
    let lhs = alpha.exterior(ops).wedge(beta).integrate(leaf_volume);
    let rhs = alpha.wedge(&beta.exterior(ops)).integrate(leaf_volume);
    let sign = if (da + 1) % 2 == 1 { -1.0 } else { 1.0 };
    (lhs - sign * rhs).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::TransverseModel;
    use nalgebra::DMatrix;
    use std::f64::consts::TAU;

    fn flat_ops(n: usize, len: usize) -> SpectralOps {
        SpectralOps::new(Grid::new(n, len).unwrap())
    }

    #[test]
    fn subset_enumeration_is_lexicographic() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(subsets(2, 0), vec![Vec::<usize>::new()]);
        assert!(subsets(2, 3).is_empty());
    }

    #[test]
    fn merge_signs_count_crossings() {
        assert_eq!(merge(&[0], &[1]).unwrap(), (1.0, vec![0, 1]));
        assert_eq!(merge(&[1], &[0]).unwrap(), (-1.0, vec![0, 1]));
        assert!(merge(&[0, 1], &[1]).is_none());
        // 2 hops over both 0 and 1... and 0 hops into front of {1, 3}.
        assert_eq!(merge(&[1, 3], &[0, 2]).unwrap(), (-1.0, vec![0, 1, 2, 3]));
    }

    #[test]
    fn constant_top_form_integrates_with_volume_normalization() {
        // c (i dz wedge dzbar)^n integrates to c 2^n n!.
        for n in [1usize, 2] {
            let total = Grid::new(n, 8).unwrap().total();
            let c = 0.7;
            let mut g = HermMatField::zeros(n, total);
            for j in 0..n {
                g.diag[j] = vec![c; total];
            }
            let omega = Form::one_one(&g);
            let mut top = omega.clone();
            for _ in 1..n {
                top = top.wedge(&omega);
            }
            let fact: f64 = (1..=n).product::<usize>() as f64;
            let want = c.powi(n as i32) * 2f64.powi(n as i32) * fact;
            let got = top.integrate(1.0);
            assert!((got.re - want).abs() < 1e-12, "n={n}: {} vs {want}", got.re);
            assert!(got.im.abs() < 1e-13);
        }
    }

    #[test]
    fn wedge_of_constant_metric_matches_determinant_volume() {
        // For constant diag(1,2) in n=2: int omega^2 = 2^2 2! det = 16.
        let total = Grid::new(2, 8).unwrap().total();
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
        ]));
        let g = HermMatField::constant(2, total, &m);
        let omega = Form::one_one(&g);
        let got = omega.wedge(&omega).integrate(1.0);
        assert!((got.re - 16.0).abs() < 1e-12);
    }

    #[test]
    fn oscillating_density_integrates_to_bessel_value() {
        // e^{0.1 cos 2pi x} i dz wedge dzbar over the unit torus: twice the
        // modified Bessel function I0(0.1).
        let ops = flat_ops(1, 64);
        let total = ops.grid().total();
        let mut g = HermMatField::zeros(1, total);
        for i in 0..total {
            let x = ops.grid().point(i)[0];
            g.diag[0][i] = (0.1 * (TAU * x).cos()).exp();
        }
        let got = Form::one_one(&g).integrate(1.0);
        let want = 2.005_003_125_868_06;
        assert!((got.re - want).abs() < 1e-12, "{} vs {want}", got.re);
    }

    #[test]
    fn mean_zero_density_integrates_to_zero() {
        let ops = flat_ops(1, 16);
        let total = ops.grid().total();
        let mut g = HermMatField::zeros(1, total);
        for i in 0..total {
            g.diag[0][i] = (TAU * ops.grid().point(i)[0]).cos();
        }
        assert!(Form::one_one(&g).integrate(1.0).norm() < 1e-14);
    }

    #[test]
    fn dolbeault_operators_square_to_zero() {
        let ops = flat_ops(2, 16);
        let grid = ops.grid();
        let mut field = vec![0.0; grid.total()];
        for i in 0..grid.total() {
            let p = grid.point(i);
            field[i] = (TAU * p[0]).cos() * (TAU * p[3]).sin()
                + 0.4 * (2.0 * TAU * p[1]).sin()
                + 0.2 * (TAU * (p[2] + p[1])).cos();
        }
        let f = Form::scalar(2, &field);
        let del2 = f.del(&ops).del(&ops);
        let delbar2 = f.delbar(&ops).delbar(&ops);
        assert!(del2.sup_norm() < 1e-12);
        assert!(delbar2.sup_norm() < 1e-12);
        // Mixed second derivatives anticommute.
        let mut mixed = f.del(&ops).delbar(&ops);
        mixed.add_scaled(&f.delbar(&ops).del(&ops), Complex64::new(1.0, 0.0));
        assert!(mixed.sup_norm() < 1e-12);
        // And d^2 = 0 for the full operator on a 1-form.
        let alpha = f.del(&ops);
        assert!(alpha.exterior(&ops).exterior(&ops).sup_norm() < 1e-11);
    }

    #[test]
    fn ddbar_of_cosine_matches_quarter_laplacian() {
        // i del delbar (0.1 cos 2pi x) in n=1 has Hermitian coefficient
        // -(0.1/4)(2pi)^2 cos = -0.1 pi^2 cos 2pi x.
        let ops = flat_ops(1, 64);
        let grid = ops.grid();
        let mut field = vec![0.0; grid.total()];
        for i in 0..grid.total() {
            field[i] = 0.1 * (TAU * grid.point(i)[0]).cos();
        }
        let f = Form::scalar(1, &field);
        // del(delbar f) carries the mixed derivative directly in its single
        // (1,1) component.
        let dd = f.delbar(&ops).del(&ops);
        let comp = dd.component(1, 1, 0).unwrap();
        for i in 0..grid.total() {
            let x = grid.point(i)[0];
            let want = -0.1 * std::f64::consts::PI.powi(2) * (TAU * x).cos();
            assert!((comp[i].re - want).abs() < 1e-10, "at x={x}: {} vs {want}", comp[i].re);
            assert!(comp[i].im.abs() < 1e-12);
        }
    }

    #[test]
    fn integration_by_parts_on_simple_pairs() {
        // alpha = cos 2pi x as a 0-form, beta = sin 2pi y dz in n=1.
        let ops = flat_ops(1, 32);
        let grid = ops.grid();
        let total = grid.total();
        let mut a_field = vec![0.0; total];
        let mut b_field = vec![Complex64::default(); total];
        for i in 0..total {
            let p = grid.point(i);
            a_field[i] = (TAU * p[0]).cos();
            b_field[i] = Complex64::new((TAU * p[1]).sin(), 0.0);
        }
        let alpha = Form::scalar(1, &a_field);
        let mut beta = Form::zero(1, total);
        beta.set_component(1, 0, 0, b_field);
        let res = check_integration_by_parts(&alpha, &beta, &ops, 1.0);
        assert!(res < 1e-10, "residual {res}");

        // Constant alpha: both sides reduce to int d(beta) = 0.
        let alpha_c = Form::scalar(1, &vec![1.25; total]);
        let res = check_integration_by_parts(&alpha_c, &beta, &ops, 1.0);
        assert!(res < 1e-12);
    }

    #[test]
    fn pullback_respects_quarter_turn_mixing() {
        // gamma: z -> iz. On dz-components: gamma* dz = i dz, so a (1,0)-form
        // u dz pulls back to i u(iz) dz.
        let rot = crate::holonomy::HolonomyElement {
            u: vec![0, -1, 1, 0],
            b: vec![crate::holonomy::Rational::zero(); 2],
        };
        let model = TransverseModel::new(1, 16, &[rot], 1, 1.0).unwrap();
        let grid = model.grid();
        let total = grid.total();
        let mut comp = vec![Complex64::default(); total];
        for i in 0..total {
            let p = grid.point(i);
            comp[i] = Complex64::new((TAU * p[0]).cos(), (TAU * p[1]).sin());
        }
        let mut alpha = Form::zero(1, total);
        alpha.set_component(1, 0, 0, comp.clone());
        let pulled = alpha.pullback(&model, 1);
        let got = pulled.component(1, 0, 0).unwrap();
        let perm = model.permutation(1);
        let uc = model.u_complex_of(1)[0];
        for i in 0..total {
            let want = uc * comp[perm[i] as usize];
            assert!((got[i] - want).norm() < 1e-13);
        }
        // Projection is idempotent and annihilates the defect.
        let mut proj = alpha.clone();
        proj.project_basic(&model);
        assert!(proj.basic_defect(&model) < 1e-12);
    }

    #[test]
    fn hermitian_coefficient_round_trip() {
        let total = Grid::new(2, 8).unwrap().total();
        let mut g = HermMatField::zeros(2, total);
        for i in 0..total {
            g.diag[0][i] = 1.5;
            g.diag[1][i] = 2.5;
            g.off[0][i] = Complex64::new(0.25, -0.1);
        }
        let (back, defect) = Form::one_one(&g).hermitian_coefficients();
        assert!(defect < 1e-15);
        assert!((back.diag[0][0] - 1.5).abs() < 1e-15);
        assert!((back.off[0][3] - Complex64::new(0.25, -0.1)).norm() < 1e-15);
    }

    #[test]
    fn realness_defect_detects_complex_forms() {
        let total = Grid::new(1, 8).unwrap().total();
        let mut g = HermMatField::zeros(1, total);
        g.diag[0] = vec![1.0; total];
        // i g dz wedge dzbar is real.
        assert!(Form::one_one(&g).realness_defect() < 1e-15);
        // dz alone is not.
        let mut a = Form::zero(1, total);
        a.set_component(1, 0, 0, vec![Complex64::new(1.0, 0.0); total]);
        assert!(a.realness_defect() > 0.5);
    }
}
