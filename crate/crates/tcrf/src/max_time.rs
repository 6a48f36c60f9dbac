//! Maximal existence horizon of the metric flow.
//!
//! The flow stays smooth exactly while the class of omega0 - t * beta keeps a
//! positive representative, where beta is the closed slope form. On the flat
//! torus models this module decides that horizon two independent ways:
//!
//! * [`t0_oracle`] reduces the question to the average matrices. A basic form
//!   splits into its grid average plus an i ddbar-exact remainder, the exact
//!   part is absorbable into the representative, so positivity of the class is
//!   positivity of the constant part. The first failure time is the reciprocal
//!   of the top eigenvalue of a Hermitian pencil, computed in closed form.
//! * [`t0_feasibility`] never looks at that structure. Each probe time runs a
//!   concave maximization over potentials psi of the worst grid eigenvalue of
//!   alpha_t + i ddbar psi, and a bisection brackets the last certifiable
//!   time. Feasible probes return an explicit certificate that is re-verified
//!   from scratch before being trusted.
//!
//! Agreement of the two routes is a genuine cross-check: the oracle exercises
//! the harmonic splitting and dense linear algebra, the search exercises the
//! transform stack and the positivity scan.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{bott_chern_class, ensure_positive, solve_ddbar_potential, BASIC_BOUND};
use crate::matrix::{embed_hermitian, hermitian_eigenvalues, hermitian_min_eigenpair, HermMatField};
use crate::model::TransverseModel;

/// Eigenvalues below this count as zero when classifying the pencil.
const THETA_FLOOR: f64 = 1e-12;

/// Horizon verdict. `AtLeast` records a probed time that was certified
/// feasible without any infeasible time above it being known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum T0 {
    Finite(f64),
    AtLeast(f64),
    Infinite,
}

/// Closed-form answer together with the decomposition it relied on.
#[derive(Debug, Clone)]
pub struct OracleSplit {
    /// Grid average of the slope, the harmonic representative of its class.
    pub harmonic: DMatrix<Complex64>,
    /// Mean-zero potential of the exact remainder of the slope.
    pub potential: Vec<f64>,
    /// Top eigenvalue of the pencil (slope average, start average).
    pub theta_max: f64,
    pub t0: T0,
}

/// Decides the horizon from average matrices alone.
///
/// Requires both forms closed and the start positive. The class of
/// omega0 - t * beta is positive exactly when A - t B is positive definite,
/// with A and B the grid averages, so the horizon is 1 / theta_max for the
/// largest generalized eigenvalue theta of B v = theta A v.
pub fn t0_oracle(
    model: &TransverseModel,
    omega0: &HermMatField,
    beta: &HermMatField,
) -> Result<OracleSplit> {
    let a_class = bott_chern_class(model, omega0)?;
    let b_class = bott_chern_class(model, beta)?;
    ensure_positive(omega0, 0.0)?;

    let mut exact = beta.clone();
    exact.axpy(-1.0, &HermMatField::constant(model.n, beta.len(), &b_class));
    let potential = solve_ddbar_potential(model, &exact)?;

    // Real embedding keeps the pencil symmetric-definite, so a real Cholesky
    // whitening reduces it to an ordinary symmetric eigenproblem. Embedded
    // eigenvalues come doubled, which cannot move the maximum.
    let chol = Cholesky::new(embed_hermitian(&a_class))
        .expect("grid average of a positive definite field is positive definite");
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&embed_hermitian(&b_class))
        .expect("Cholesky factor is invertible");
    let m = l
        .solve_lower_triangular(&y.transpose())
        .expect("Cholesky factor is invertible");
    let sym = (&m + m.transpose()) * 0.5;
    let theta_max = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::MIN, f64::max);

    let t0 = if theta_max <= THETA_FLOOR { T0::Infinite } else { T0::Finite(1.0 / theta_max) };
    Ok(OracleSplit { harmonic: b_class, potential, theta_max, t0 })
}

/// Knobs for the certificate search. Defaults suit the desk-scale grids.
#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    /// Certified margins must clear this floor.
    pub eps_pos: f64,
    /// Iteration cap for one ascent.
    pub max_ascent: usize,
    /// Consecutive non-improving iterations before conceding infeasibility.
    pub stagnation: usize,
    /// Upper probe; a certificate there short-circuits the bisection.
    pub t_hi: f64,
    /// Relative bracket width at which the bisection stops.
    pub tol_rel: f64,
    /// Seed the ascent from the potential that flattens alpha_t, when one
    /// exists. Disable to exercise the ascent from zero.
    pub warm_start: bool,
    /// Reject a probe outright when the average matrix is not positive. The
    /// bound is exact on the grid (the hessian has zero mean and the worst
    /// eigenvalue is concave), so this only skips provably hopeless ascents.
    pub averaging_bound: bool,
    /// Base step scale for the normalized supergradient ascent.
    pub step0: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            eps_pos: 1e-8,
            max_ascent: 2000,
            stagnation: 200,
            t_hi: 1e3,
            tol_rel: 2e-4,
            warm_start: true,
            averaging_bound: true,
            step0: 0.1,
        }
    }
}

/// Witness that the class at time `t` contains a positive representative.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub t: f64,
    /// Basic potential whose hessian restores positivity.
    pub psi: Vec<f64>,
    /// Worst grid eigenvalue of alpha_t + i ddbar psi, recomputed fresh.
    pub margin: f64,
}

/// Recomputes a certificate margin from nothing but its data.
///
/// Projects the potential, rebuilds the candidate form through the full
/// transform stack, and returns the worst eigenvalue over the grid. Rejects
/// potentials that are not basic to working precision.
pub fn certify(
    model: &TransverseModel,
    omega0: &HermMatField,
    beta: &HermMatField,
    t: f64,
    psi: &[f64],
) -> Result<f64> {
    let total = model.grid().total();
    if psi.len() != total {
        return Err(Error::config(
            "certificate.psi",
            format!("potential has {} samples, grid has {}", psi.len(), total),
        ));
    }
    let mut p = psi.to_vec();
    let defect = model.project_field(&mut p);
    if defect > BASIC_BOUND {
        return Err(Error::BasicDefect { norm: defect, bound: BASIC_BOUND });
    }
    let mut spec = model.ops.zero_spectrum();
    model.ops.forward(&p, &mut spec);
    model.project_spectrum(&mut spec);
    let mut hess = HermMatField::zeros(model.n, total);
    model.ops.hessian(&spec, &mut hess);
    let mut cand = omega0.clone();
    cand.axpy(-t, beta);
    cand.axpy(1.0, &hess);
    Ok(cand.min_eig())
}

/// Supergradient of the worst grid eigenvalue at `point`, optionally
/// preconditioned into a balanced ascent direction.
///
/// With unit eigenvector v for the active matrix, the derivative of the
/// margin in a potential direction is linear, and its Riesz representative
/// on the kept band has coefficients -|sum_j conj(v_j) p_j|^2 times the
/// conjugated phase of the mode at the active point, with p_j the
/// first-derivative multipliers. The spectrum is conjugate-even, so its
/// inverse transform is real; it is left in both `spec_ws` and `out`.
///
/// The raw gradient feeds back through the hessian, so its induced move on
/// the candidate form weights a mode by the fourth power of its frequency;
/// steps that lift the active pocket then swing the quarter-period points
/// violently. With `precondition` set, mode t is divided by the squared
/// trace symbol (sum_j |p_j|^2)^2, cancelling both growth factors so the
/// induced move is a balanced bump at the active point. A positive diagonal
/// rescaling in spectrum space keeps it a valid ascent direction for the
/// concave margin.
fn supergradient(
    model: &TransverseModel,
    cand: &HermMatField,
    point: usize,
    precondition: bool,
    spec_ws: &mut [Complex64],
    out: &mut [f64],
) {
    let (_, v) = hermitian_min_eigenpair(&cand.at(point));
    let x = model.grid().point(point);
    for t in 0..model.ops.kept_count() {
        let mut w = Complex64::new(0.0, 0.0);
        let mut sym = 0.0;
        for j in 0..model.n {
            let p = model.ops.dz_multiplier(t, j);
            w += v[j].conj() * p;
            sym += p.norm_sqr();
        }
        let scale = if !precondition {
            1.0
        } else if sym > 0.0 {
            1.0 / (sym * sym)
        } else {
            // The constant mode carries no hessian and no gradient weight.
            0.0
        };
        let modes = model.ops.mode_at(t);
        let phase = std::f64::consts::TAU
            * modes.iter().zip(&x).map(|(m, xi)| *m as f64 * xi).sum::<f64>();
        spec_ws[t] = Complex64::new(phase.cos(), -phase.sin()) * (-w.norm_sqr() * scale);
    }
    model.ops.inverse_real(spec_ws, out);
}

/// Searches for a potential making alpha_t = omega0 - t * beta positive.
///
/// The objective, the worst grid eigenvalue of alpha_t + i ddbar psi, is
/// concave in psi, so a projected supergradient ascent with diminishing
/// normalized steps and restarted momentum either clears `eps_pos`, in which
/// case the certificate is re-verified from scratch before being returned, or
/// the probe is conservatively declared infeasible.
pub fn feasible_at(
    model: &TransverseModel,
    omega0: &HermMatField,
    beta: &HermMatField,
    t: f64,
    cfg: &SearchConfig,
) -> Result<Option<Certificate>> {
    let total = model.grid().total();
    let mut alpha = omega0.clone();
    alpha.axpy(-t, beta);

    let avg = alpha.mean_matrix();
    if cfg.averaging_bound && hermitian_eigenvalues(&avg)[0] <= cfg.eps_pos {
        return Ok(None);
    }

    let mut psi = vec![0.0; total];
    if cfg.warm_start {
        let mut offset = alpha.clone();
        offset.axpy(-1.0, &HermMatField::constant(model.n, total, &avg));
        match solve_ddbar_potential(model, &offset) {
            // The negated potential flattens alpha_t to its average.
            Ok(p) => {
                for (ps, v) in psi.iter_mut().zip(&p) {
                    *ps = -v;
                }
            }
            Err(Error::NotExact { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    let mut spec = model.ops.zero_spectrum();
    let mut dir_spec = model.ops.zero_spectrum();
    let mut hess = HermMatField::zeros(model.n, total);
    let mut hess_dir = HermMatField::zeros(model.n, total);
    let mut dir = vec![0.0; total];
    let mut velocity = vec![0.0; total];
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    let mut flat = 0usize;
    let mut since_restart = 0usize;

    for k in 1..=cfg.max_ascent {
        model.project_field(&mut psi);
        model.ops.forward(&psi, &mut spec);
        model.project_spectrum(&mut spec);
        model.ops.hessian(&spec, &mut hess);
        let mut cand = alpha.clone();
        cand.axpy(1.0, &hess);
        let (margin, point) = cand.min_eig_argmin();

        if margin > cfg.eps_pos {
            let fresh = certify(model, omega0, beta, t, &psi)?;
            if fresh > cfg.eps_pos {
                return Ok(Some(Certificate { t, psi, margin: fresh }));
            }
        }

        if margin <= best + 1e-12 * (1.0 + best.abs()) {
            flat += 1;
            if flat >= cfg.stagnation {
                return Ok(None);
            }
        } else {
            best = margin;
            flat = 0;
        }

        if margin < prev {
            velocity.iter_mut().for_each(|v| *v = 0.0);
            since_restart = 0;
        }
        prev = margin;
        since_restart += 1;

        supergradient(model, &cand, point, true, &mut dir_spec, &mut dir);
        // Normalize by the direction's actual effect on the candidate, so a
        // unit step moves the worst eigenvalue by order eta.
        model.ops.hessian(&dir_spec, &mut hess_dir);
        let effect = hess_dir.sup_norm().max(1e-18);
        let eta = cfg.step0 * (1.0 + margin.abs()) / (effect * (k as f64).sqrt());
        let mu = (since_restart as f64 - 1.0) / (since_restart as f64 + 2.0);
        for ((p, v), g) in psi.iter_mut().zip(&mut velocity).zip(&dir) {
            *v = mu * *v + eta * g;
            *p += *v;
        }
    }
    Ok(None)
}

/// Bisection record: verdict, every probe with its decision, and the deepest
/// certificate found.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub t0: T0,
    pub probes: Vec<(f64, bool)>,
    pub certificate: Option<Certificate>,
}

/// Estimates the horizon by bisection on certified feasibility.
///
/// Probes `t_hi` first; a certificate there ends the search with `AtLeast`.
/// Otherwise bisects between zero, feasible by the positivity of the start,
/// and `t_hi`, down to relative width `tol_rel`, and reports the bracket
/// midpoint. Probe decisions must split monotonically around the bracket.
pub fn t0_feasibility(
    model: &TransverseModel,
    omega0: &HermMatField,
    beta: &HermMatField,
    cfg: &SearchConfig,
) -> Result<FeasibilityReport> {
    ensure_positive(omega0, 0.0)?;
    let mut probes = Vec::new();
    let mut certificate = None;

    match feasible_at(model, omega0, beta, cfg.t_hi, cfg)? {
        Some(c) => {
            probes.push((cfg.t_hi, true));
            return Ok(FeasibilityReport { t0: T0::AtLeast(cfg.t_hi), probes, certificate: Some(c) });
        }
        None => probes.push((cfg.t_hi, false)),
    }

    let (mut lo, mut hi) = (0.0f64, cfg.t_hi);
    while hi - lo > cfg.tol_rel * (1.0 + lo) {
        let mid = 0.5 * (lo + hi);
        match feasible_at(model, omega0, beta, mid, cfg)? {
            Some(c) => {
                probes.push((mid, true));
                certificate = Some(c);
                lo = mid;
            }
            None => {
                probes.push((mid, false));
                hi = mid;
            }
        }
    }

    let top_feasible =
        probes.iter().filter(|p| p.1).map(|p| p.0).fold(0.0f64, f64::max);
    let low_infeasible =
        probes.iter().filter(|p| !p.1).map(|p| p.0).fold(f64::INFINITY, f64::min);
    // Concavity of the margin in t makes feasibility an interval; a probe
    // record violating that means the search itself is broken.
    assert!(top_feasible < low_infeasible);

    Ok(FeasibilityReport { t0: T0::Finite(0.5 * (lo + hi)), probes, certificate })
}
