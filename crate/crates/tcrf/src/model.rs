//! The transverse model space: a flat torus with a finite holonomy group.
//!
//! Basic objects are those invariant under the group action. Projection onto
//! the invariant subspace is an orbit average; on the compact spectrum it is
//! a permutation-with-phase average, exact because the group maps retained
//! modes to retained modes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::holonomy::{close_group, HolonomyElement};
use crate::matrix::HermMatField;
use crate::spectral::SpectralOps;

pub struct TransverseModel {
    pub n: usize,
    pub ops: SpectralOps,
    pub group: Vec<HolonomyElement>,
    pub leaf_dim: usize,
    pub leaf_volume: f64,
    /// Per element: flat index of the image point.
    perms: Vec<Vec<u32>>,
    /// Per element: retained-slot index feeding each output slot.
    spec_perm: Vec<Vec<u32>>,
    /// Per element: translation phase attached to each output slot.
    spec_phase: Vec<Vec<Complex64>>,
    uc: Vec<Vec<Complex64>>,
    scratch: RefCell<Vec<Complex64>>,
}

/// Finite groups in this setting are small; anything larger signals a
/// misconfigured generator list long before this bound.
const GROUP_CAP: usize = 256;

impl TransverseModel {
    pub fn new(
        n: usize,
        len: usize,
        generators: &[HolonomyElement],
        leaf_dim: usize,
        leaf_volume: f64,
    ) -> Result<Self> {
        let grid = Grid::new(n, len)?;
        if leaf_dim == 0 {
            return Err(Error::config("leaf_dim", "must be a positive integer"));
        }
        if !(leaf_volume > 0.0) || !leaf_volume.is_finite() {
            return Err(Error::config("leaf_volume", "must be positive and finite"));
        }
        for g in generators {
            g.validate(n, len)?;
        }
        let group = close_group(2 * n, generators, GROUP_CAP)?;
        let ops = SpectralOps::new(grid);
        let grid = ops.grid();

        let mut perms = Vec::with_capacity(group.len());
        let mut spec_perm = Vec::with_capacity(group.len());
        let mut spec_phase = Vec::with_capacity(group.len());
        let mut uc = Vec::with_capacity(group.len());
        for g in &group {
            let mut p = Vec::with_capacity(grid.total());
            for i in 0..grid.total() {
                let image = g.map_coords(&grid.coords(i), len);
                p.push(grid.flat(&image) as u32);
            }
            perms.push(p);

            let kept = ops.kept_count();
            let mut sp = Vec::with_capacity(kept);
            let mut ph = Vec::with_capacity(kept);
            let axes = 2 * n;
            for t in 0..kept {
                let m = ops.mode_at(t);
                // Composing with the group element sends the coefficient at
                // mode m to the one at U m, picking up the phase from b.
                let um: Vec<i64> = (0..axes)
                    .map(|r| (0..axes).map(|k| g.u[r * axes + k] * m[k]).sum())
                    .collect();
                let pos = ops
                    .position_of_modes(&um)
                    .expect("signed permutations preserve the retained mode set");
                let angle: f64 =
                    2.0 * std::f64::consts::PI * (0..axes).map(|r| um[r] as f64 * g.b[r].as_f64()).sum::<f64>();
                sp.push(pos as u32);
                ph.push(Complex64::from_polar(1.0, angle));
            }
            spec_perm.push(sp);
            spec_phase.push(ph);
            uc.push(g.u_complex(n));
        }
        Ok(TransverseModel {
            n,
            ops,
            group,
            leaf_dim,
            leaf_volume,
            perms,
            spec_perm,
            spec_phase,
            uc,
            scratch: RefCell::new(Vec::new()),
        })
    }

    pub fn grid(&self) -> Grid {
        self.ops.grid()
    }

    pub fn group_order(&self) -> usize {
        self.group.len()
    }

    pub fn is_trivial_group(&self) -> bool {
        self.group.len() == 1
    }

    /// Orbit average in place; returns the sup distance from invariance
    /// before averaging.
    pub fn project_field(&self, f: &mut [f64]) -> f64 {
        if self.is_trivial_group() {
            return 0.0;
        }
        let inv = 1.0 / self.group.len() as f64;
        let mut defect = 0.0f64;
        let avg: Vec<f64> = (0..f.len())
            .map(|i| {
                let mut s = 0.0;
                for p in &self.perms {
                    s += f[p[i] as usize];
                }
                s * inv
            })
            .collect();
        for (v, a) in f.iter_mut().zip(&avg) {
            defect = defect.max((*v - a).abs());
            *v = *a;
        }
        defect
    }

    /// Sup over the group of |f(gamma x) - f(x)|.
    pub fn field_defect(&self, f: &[f64]) -> f64 {
        let mut d = 0.0f64;
        for p in self.perms.iter().skip(1) {
            for i in 0..f.len() {
                d = d.max((f[p[i] as usize] - f[i]).abs());
            }
        }
        d
    }

    /// Orbit average on the compact spectrum. Exact projector: idempotent up
    /// to roundoff and diagonal in the retained-mode labels up to the
    /// permutation action.
    pub fn project_spectrum(&self, spec: &mut [Complex64]) {
        if self.is_trivial_group() {
            return;
        }
        let mut tmp = self.scratch.borrow_mut();
        tmp.clear();
        tmp.extend_from_slice(spec);
        let inv = 1.0 / self.group.len() as f64;
        for (t, out) in spec.iter_mut().enumerate() {
            let mut s = Complex64::default();
            for (sp, ph) in self.spec_perm.iter().zip(&self.spec_phase) {
                s += tmp[sp[t] as usize] * ph[t];
            }
            *out = s * inv;
        }
    }

    /// Grid permutation of group element `gi`: entry i is the flat index of
    /// the image of point i.
    pub fn permutation(&self, gi: usize) -> &[u32] {
        &self.perms[gi]
    }

    /// Complex n x n linear part of group element `gi`, row-major.
    pub fn u_complex_of(&self, gi: usize) -> &[Complex64] {
        &self.uc[gi]
    }

    /// Spectrum projection with the abort contract: the correction is
    /// bounded above by the coefficient-sum distance and must stay below
    /// `bound`, else the data has drifted off the invariant subspace.
    pub fn project_spectrum_checked(&self, spec: &mut [Complex64], bound: f64) -> Result<f64> {
        if self.is_trivial_group() {
            return Ok(0.0);
        }
        let mut tmp = self.scratch.borrow_mut();
        tmp.clear();
        tmp.extend_from_slice(spec);
        let inv = 1.0 / self.group.len() as f64;
        let mut sum = 0.0;
        for (t, out) in spec.iter_mut().enumerate() {
            let mut s = Complex64::default();
            for (sp, ph) in self.spec_perm.iter().zip(&self.spec_phase) {
                s += tmp[sp[t] as usize] * ph[t];
            }
            s *= inv;
            sum += (s - *out).norm();
            *out = s;
        }
        let correction = sum / self.grid().total() as f64;
        log::debug!("basic projection correction bound {correction:.3e}");
        if correction > bound {
            return Err(Error::BasicDefect { norm: correction, bound });
        }
        Ok(correction)
    }

    /// Pullback of a Hermitian coefficient field under group element `gi`:
    /// the matrix transforms by conjugation with the complex linear part and
    /// the base point moves along the orbit.
    pub fn pullback_metric(&self, gi: usize, g: &HermMatField, out: &mut HermMatField) {
        let n = self.n;
        let perm = &self.perms[gi];
        let ucm = DMatrix::from_fn(n, n, |r, c| self.uc[gi][r * n + c]);
        let uct = ucm.transpose();
        let ucc = ucm.map(|z| z.conj());
        for i in 0..g.len() {
            let m = g.at(perm[i] as usize);
            out.set_at(i, &(&uct * m * &ucc));
        }
    }

    /// Sup over nontrivial group elements of the entrywise pullback defect.
    pub fn metric_defect(&self, g: &HermMatField) -> f64 {
        let mut d = 0.0f64;
        let mut pulled = HermMatField::zeros(self.n, g.len());
        for gi in 1..self.group.len() {
            self.pullback_metric(gi, g, &mut pulled);
            pulled.axpy(-1.0, g);
            d = d.max(pulled.sup_norm());
        }
        d
    }
}
