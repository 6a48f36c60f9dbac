//! Multi-dimensional FFT over the model grid.
//!
//! A transform runs one pass per axis. Each pass views the array as
//! `[N][rest]`, pulls lines of the slowest axis into cache-sized blocks,
//! runs batched length-N FFTs, and writes lines out contiguously, which
//! rotates that axis to the fastest position. After all `2n` passes every
//! axis has been transformed once and the layout is back to canonical
//! row-major. Everything is sequential and scratch buffers live inside the
//! plan, so calls allocate nothing and results are bitwise reproducible.
//!
//! Forward is the plain DFT `sum f(x) exp(-i k.x)`; inverse carries the
//! `1/N` factor per pass, so `inverse(forward(f)) = f`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::sync::Arc;

use crate::grid::Grid;

pub struct Fft {
    grid: Grid,
    fwd: Arc<dyn rustfft::Fft<f64>>,
    inv: Arc<dyn rustfft::Fft<f64>>,
    block_lines: usize,
    // (gather block, rustfft scratch); RefCell keeps the hot path free of
    // allocation while the public API stays &self.
    work: RefCell<(Vec<Complex64>, Vec<Complex64>)>,
}

#[derive(Clone, Copy)]
enum Dir {
    Fwd,
    Inv,
}

impl Fft {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.len);
        let inv = planner.plan_fft_inverse(grid.len);
        // Keep gather blocks around 64 KiB so they stay cache resident.
        let block_lines = (4096 / grid.len).max(1);
        let scratch = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let work = RefCell::new((
            vec![Complex64::default(); block_lines * grid.len],
            vec![Complex64::default(); scratch],
        ));
        Fft { grid, fwd, inv, block_lines, work }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// In-place forward transform; `tmp` is a same-length scratch buffer.
    pub fn forward(&self, data: &mut [Complex64], tmp: &mut [Complex64]) {
        // Axes is even, so ping-ponging lands the result back in `data`.
        for p in 0..self.grid.axes() {
            if p % 2 == 0 {
                self.pass(data, tmp, Dir::Fwd);
            } else {
                self.pass(tmp, data, Dir::Fwd);
            }
        }
    }

    /// In-place inverse transform with 1/N^{2n} normalization.
    pub fn inverse(&self, data: &mut [Complex64], tmp: &mut [Complex64]) {
        for p in 0..self.grid.axes() {
            if p % 2 == 0 {
                self.pass(data, tmp, Dir::Inv);
            } else {
                self.pass(tmp, data, Dir::Inv);
            }
        }
    }

    /// Inverse transform reading `src` without mutating it; the result lands
    /// in `b`. `src` is only consumed by the first pass, so a caller keeping
    /// zeros outside a sparse support in `src` keeps them across calls.
    pub fn inverse_from(&self, src: &[Complex64], a: &mut [Complex64], b: &mut [Complex64]) {
        self.pass(src, a, Dir::Inv);
        for p in 1..self.grid.axes() {
            if p % 2 == 1 {
                self.pass(a, b, Dir::Inv);
            } else {
                self.pass(b, a, Dir::Inv);
            }
        }
    }

    fn pass(&self, src: &[Complex64], dst: &mut [Complex64], dir: Dir) {
        let total = self.grid.total();
        assert_eq!(src.len(), total);
        assert_eq!(dst.len(), total);
        let (plan, scale) = match dir {
            Dir::Fwd => (&self.fwd, 1.0),
            Dir::Inv => (&self.inv, 1.0 / self.grid.len as f64),
        };
        let n = self.grid.len;
        let rest = total / n;
        let mut work = self.work.borrow_mut();
        let (block, scratch) = &mut *work;
        let mut l0 = 0;
        while l0 < rest {
            let b = self.block_lines.min(rest - l0);
            let buf = &mut block[..b * n];
            // Gather: line l0+bi of the slowest axis into row bi.
            for j in 0..n {
                let row = &src[j * rest + l0..j * rest + l0 + b];
                for (bi, &v) in row.iter().enumerate() {
                    buf[bi * n + j] = v;
                }
            }
            plan.process_with_scratch(buf, scratch);
            let out = &mut dst[l0 * n..(l0 + b) * n];
            if scale == 1.0 {
                out.copy_from_slice(buf);
            } else {
                for (o, &v) in out.iter_mut().zip(buf.iter()) {
                    *o = v * scale;
                }
            }
            l0 += b;
        }
    }
}
