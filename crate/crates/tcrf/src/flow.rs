//! Time evolution of the metric family through its scalar potential.
//!
//! The metric never leaves the affine family `omega_hat(t) + i ddbar phi`:
//! the whole flow is carried by one scalar, which satisfies a parabolic log
//! Monge-Ampere equation. The right side is the log ratio of the evolving
//! volume density to a fixed reference density, so a vanishing right side
//! means the metric is Ricci-flat and stationary.
//!
//! Stepping is classical RK4 on the compact spectrum of the potential. Every
//! stage re-projects onto the invariant band, checks metric positivity, and
//! the step is committed only after all four stages succeed, so a halted run
//! always ends on the last accepted state.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{chern_ricci, BASIC_BOUND};
use crate::grid::{self, comp_sum_by};
use crate::matrix::HermMatField;
use crate::model::TransverseModel;
use crate::spectral::SpectralOps;

/// Eigenvalue floor below which the metric counts as degenerate.
pub const POS_FLOOR: f64 = 1e-10;

/// Smallest admissible time step before a run is declared stalled.
pub const DT_FLOOR: f64 = 1e-12;

/// Default Courant factor for the adaptive step-size rule.
pub const CFL_DEFAULT: f64 = 0.8;

/// Default curvature tolerance for convergence detection.
pub const TOL_CONVERGENCE: f64 = 1e-7;

/// Frozen data defining the potential formulation of one run: the moving
/// background family, the gauge potential that generated it, and the log of
/// the reference volume density.
#[derive(Clone)]
pub struct ReferenceData {
    pub t_prime: f64,
    /// Gauge potential; the background slope is its complex Hessian over
    /// `t_prime` minus the initial Chern-Ricci coefficient.
    pub f: Vec<f64>,
    /// Background slope; the background at time t is `g0 + t * lambda`.
    pub lambda: HermMatField,
    /// Exact-zero slope, enabling the frozen-background fast path.
    pub lambda_zero: bool,
    /// Log of the reference density divided by the top-form convention
    /// factor 2^n n!, so the flow right side is `log det g_t` minus this.
    pub log_volume: Vec<f64>,
    pub g0: HermMatField,
    /// True when the right side vanishes identically at zero potential and
    /// the background is frozen: zero stays an exact fixed point, bit for bit.
    pub stationary: bool,
}

impl ReferenceData {
    pub fn omega_hat(&self, t: f64) -> HermMatField {
        let mut out = self.g0.clone();
        if !self.lambda_zero && t != 0.0 {
            out.axpy(t, &self.lambda);
        }
        out
    }

    pub fn omega_hat_into(&self, t: f64, out: &mut HermMatField) {
        for (d, s) in out.diag.iter_mut().zip(&self.g0.diag) {
            d.copy_from_slice(s);
        }
        for (d, s) in out.off.iter_mut().zip(&self.g0.off) {
            d.copy_from_slice(s);
        }
        if !self.lambda_zero && t != 0.0 {
            out.axpy(t, &self.lambda);
        }
    }

    /// Multiply the reference density by a constant factor.
    pub fn scale_volume(&mut self, factor: f64) {
        let shift = factor.ln();
        for v in &mut self.log_volume {
            *v += shift;
        }
        self.stationary = false;
    }
}

/// Build reference data with the default gauge: the gauge potential is
/// `-t_prime` times the centered log determinant of `g0`. This freezes the
/// background at `g0` and makes every flat metric exactly stationary.
pub fn build_reference(
    model: &TransverseModel,
    g0: &HermMatField,
    t_prime: f64,
) -> Result<ReferenceData> {
    check_horizon_length(t_prime)?;
    // Validates positivity and basicness of the initial metric; the
    // curvature itself cancels out of the default gauge.
    chern_ricci(model, g0)?;
    let total = model.grid().total();
    let mut log_det = vec![0.0; total];
    for (i, v) in log_det.iter_mut().enumerate() {
        *v = g0.log_det_at(i);
    }
    let mean = grid::mean(&log_det);
    let mut f = vec![0.0; total];
    let mut log_volume = vec![0.0; total];
    let mut rhs0_zero = true;
    for i in 0..total {
        let centered = log_det[i] - mean;
        f[i] = -t_prime * centered;
        log_volume[i] = mean;
        if centered != 0.0 {
            rhs0_zero = false;
        }
    }
    // The slope is (1/t_prime) H(f) - ricci with f = -t_prime * centered
    // log det, which cancels exactly; write the zero directly instead of
    // round-tripping the cancellation through transforms.
    let lambda = HermMatField::zeros(model.n, total);
    Ok(ReferenceData {
        t_prime,
        f,
        lambda,
        lambda_zero: true,
        log_volume,
        g0: g0.clone(),
        stationary: rhs0_zero,
    })
}

/// Build reference data from an explicit gauge potential. The background
/// slope is `(1/t_prime) i ddbar f` minus the initial Chern-Ricci form, and
/// the reference density is `e^{f/t_prime}` times the initial volume form.
pub fn build_reference_with(
    model: &TransverseModel,
    g0: &HermMatField,
    t_prime: f64,
    f: &[f64],
) -> Result<ReferenceData> {
    check_horizon_length(t_prime)?;
    let total = model.grid().total();
    if f.len() != total {
        return Err(Error::config("reference.f", "length does not match the grid"));
    }
    let ricci = chern_ricci(model, g0)?;
    let ops = &model.ops;

    let mut fspec = ops.zero_spectrum();
    ops.forward(f, &mut fspec);
    model.project_spectrum_checked(&mut fspec, BASIC_BOUND)?;
    let mut hf = HermMatField::zeros(model.n, total);
    ops.hessian(&fspec, &mut hf);

    let mut lambda = HermMatField::zeros(model.n, total);
    lambda.axpy(1.0 / t_prime, &hf);
    lambda.axpy(-1.0, &ricci.r);
    let lambda_zero = lambda.sup_norm() == 0.0;

    let mut log_volume = vec![0.0; total];
    let mut rhs0_zero = true;
    for i in 0..total {
        log_volume[i] = f[i] / t_prime + g0.log_det_at(i);
        if g0.log_det_at(i) - log_volume[i] != 0.0 {
            rhs0_zero = false;
        }
    }

    let reference = ReferenceData {
        t_prime,
        f: f.to_vec(),
        lambda,
        lambda_zero,
        log_volume,
        g0: g0.clone(),
        stationary: lambda_zero && rhs0_zero,
    };

    // The log reference density must reproduce the slope under i ddbar, and
    // the background at the horizon must agree with the gauge-corrected
    // endpoint. Both are identities of the construction; a violation means
    // the supplied gauge field is too rough for the discretization.
    let mut vspec = ops.zero_spectrum();
    ops.forward(&reference.log_volume, &mut vspec);
    model.project_spectrum_checked(&mut vspec, BASIC_BOUND)?;
    let mut hv = HermMatField::zeros(model.n, total);
    ops.hessian(&vspec, &mut hv);
    hv.axpy(-1.0, &reference.lambda);
    let slope_defect = hv.sup_norm();
    if slope_defect > 1e-10 {
        return Err(Error::config(
            "reference.f",
            format!("log density fails to reproduce the background slope: defect {slope_defect:.3e}"),
        ));
    }

    let mut endpoint = g0.clone();
    endpoint.axpy(-t_prime, &ricci.r);
    endpoint.axpy(1.0, &hf);
    endpoint.axpy(-1.0, &reference.omega_hat(t_prime));
    let end_defect = endpoint.sup_norm();
    if end_defect > 1e-12 {
        return Err(Error::config(
            "reference.f",
            format!("background horizon endpoint mismatch: defect {end_defect:.3e}"),
        ));
    }

    check_horizon_positivity(&reference)?;
    Ok(reference)
}

fn check_horizon_length(t_prime: f64) -> Result<()> {
    if !(t_prime > 0.0) || !t_prime.is_finite() {
        return Err(Error::config("reference.t_prime", "must be positive and finite"));
    }
    Ok(())
}

/// The background must stay positive on the whole gauge horizon.
fn check_horizon_positivity(reference: &ReferenceData) -> Result<()> {
    if reference.lambda_zero {
        return Ok(());
    }
    const SAMPLES: usize = 16;
    for k in 0..=SAMPLES {
        let t = reference.t_prime * (k as f64) / (SAMPLES as f64);
        let (min_eig, _) = reference.omega_hat(t).min_eig_argmin();
        if !(min_eig > POS_FLOOR) {
            return Err(Error::InfeasibleHorizon { t, min_eig });
        }
    }
    Ok(())
}

/// One accepted point of the evolution, with its cached metric and
/// diagnostics.
#[derive(Clone)]
pub struct FlowState {
    pub t: f64,
    /// Compact spectrum of the potential; field and metric are derived.
    pub phi_spec: Vec<Complex64>,
    pub phi: Vec<f64>,
    pub metric: HermMatField,
    pub min_eig: f64,
    /// Sup norm of the Chern-Ricci coefficient at this state.
    pub rho_sup: f64,
    pub osc_phi: f64,
    /// Oscillation of the flow right side at this state.
    pub rhs_osc: f64,
    /// Step size that produced this state; zero for the initial state.
    pub dt: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum DtPolicy {
    /// Step size `c_cfl * min_eig / max_symbol`, recomputed every step from
    /// the current metric and the largest spectral multiplier.
    Adaptive { c_cfl: f64 },
    Fixed { dt: f64 },
}

#[derive(Clone, Debug)]
pub struct Schedule {
    pub t_end: f64,
    pub policy: DtPolicy,
    /// Diagnostics cadence in steps; 0 records only the endpoints.
    pub sample_every: usize,
    /// Attach potential and metric snapshots to every sample.
    pub store_fields: bool,
    pub max_steps: usize,
    /// Stop early once the curvature sup norm drops below this at a sample
    /// point. For the normalized flow the same knob bounds the residual.
    pub stop_tol: Option<f64>,
}

impl Schedule {
    pub fn adaptive(t_end: f64) -> Self {
        Schedule {
            t_end,
            policy: DtPolicy::Adaptive { c_cfl: CFL_DEFAULT },
            sample_every: 50,
            store_fields: false,
            max_steps: 2_000_000,
            stop_tol: None,
        }
    }

    pub fn fixed(t_end: f64, dt: f64) -> Self {
        Schedule { policy: DtPolicy::Fixed { dt }, ..Schedule::adaptive(t_end) }
    }
}

/// Diagnostics recorded along a run.
#[derive(Clone)]
pub struct Sample {
    pub t: f64,
    /// Steps completed when the sample was taken.
    pub step: usize,
    pub dt: f64,
    pub min_eig: f64,
    pub rho_sup: f64,
    pub osc_phi: f64,
    pub rhs_osc: f64,
    /// Total volume of the evolving metric, including the leaf factor.
    pub volume: f64,
    pub basic_defect: f64,
    pub phi: Option<Vec<f64>>,
    /// Exact integrator state at the sample, for bit-faithful restarts.
    pub phi_spec: Option<Vec<Complex64>>,
    pub metric: Option<HermMatField>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HaltReason {
    ReachedEnd,
    Converged { t: f64 },
    PositivityLoss { t: f64, point: usize, min_eig: f64 },
    Stalled { t: f64, dt: f64 },
    StepLimit { t: f64 },
}

pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub state: FlowState,
    pub halt: HaltReason,
    pub steps: usize,
}

struct Workspace {
    metric: HermMatField,
    hess: HermMatField,
    rhs: Vec<f64>,
    field: Vec<f64>,
}

impl Workspace {
    fn new(model: &TransverseModel) -> Self {
        let total = model.grid().total();
        Workspace {
            metric: HermMatField::zeros(model.n, total),
            hess: HermMatField::zeros(model.n, total),
            rhs: vec![0.0; total],
            field: vec![0.0; total],
        }
    }
}

struct StageOut {
    min_eig: f64,
    rhs_osc: f64,
}

type Forcing<'a> = &'a dyn Fn(f64, &mut [f64]);

/// Assemble the metric at (t, phi), check positivity, and write the
/// projected spectrum of the flow right side into `out`.
fn stage(
    model: &TransverseModel,
    reference: &ReferenceData,
    t: f64,
    phi_spec: &[Complex64],
    forcing: Option<Forcing>,
    ws: &mut Workspace,
    out: &mut [Complex64],
) -> Result<StageOut> {
    reference.omega_hat_into(t, &mut ws.metric);
    if !SpectralOps::is_zero(phi_spec) {
        model.ops.hessian(phi_spec, &mut ws.hess);
        ws.metric.axpy(1.0, &ws.hess);
    }
    let (min_eig, point) = ws.metric.min_eig_argmin();
    if !(min_eig > POS_FLOOR) {
        return Err(Error::PositivityLoss { t, point, min_eig });
    }
    for (i, r) in ws.rhs.iter_mut().enumerate() {
        *r = ws.metric.log_det_at(i) - reference.log_volume[i];
    }
    if let Some(f) = forcing {
        f(t, &mut ws.rhs);
    }
    let rhs_osc = grid::osc(&ws.rhs);
    model.ops.forward(&ws.rhs, out);
    model.project_spectrum_checked(out, BASIC_BOUND)?;
    Ok(StageOut { min_eig, rhs_osc })
}

/// The flow right side at (t, phi): log of the evolving volume density over
/// the reference density, projected back onto the basic band.
pub fn ma_rhs(
    model: &TransverseModel,
    reference: &ReferenceData,
    t: f64,
    phi_spec: &[Complex64],
) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(model);
    let mut spec = model.ops.zero_spectrum();
    stage(model, reference, t, phi_spec, None, &mut ws, &mut spec)?;
    let mut out = vec![0.0; model.grid().total()];
    model.ops.inverse_real(&spec, &mut out);
    Ok(out)
}

/// The state at t = 0: zero potential on the initial metric.
pub fn initial_state(model: &TransverseModel, reference: &ReferenceData) -> Result<FlowState> {
    let mut ws = Workspace::new(model);
    let mut spec = model.ops.zero_spectrum();
    let phi_spec = model.ops.zero_spectrum();
    let info = stage(model, reference, 0.0, &phi_spec, None, &mut ws, &mut spec)?;
    let ricci = chern_ricci(model, &ws.metric)?;
    Ok(FlowState {
        t: 0.0,
        phi_spec,
        phi: vec![0.0; model.grid().total()],
        metric: ws.metric,
        min_eig: info.min_eig,
        rho_sup: ricci.r.sup_norm(),
        osc_phi: 0.0,
        rhs_osc: info.rhs_osc,
        dt: 0.0,
    })
}

/// One RK4 step of length dt. Every stage is projected and positivity
/// checked; errors leave the input state untouched.
pub fn step(
    model: &TransverseModel,
    reference: &ReferenceData,
    state: &FlowState,
    dt: f64,
) -> Result<FlowState> {
    if !(dt >= DT_FLOOR) {
        return Err(Error::Stalled { t: state.t, dt });
    }
    let ops = &model.ops;
    let kept = ops.kept_count();
    let mut ws = Workspace::new(model);
    let mut k1 = vec![Complex64::ZERO; kept];
    let mut k2 = vec![Complex64::ZERO; kept];
    let mut k3 = vec![Complex64::ZERO; kept];
    let mut k4 = vec![Complex64::ZERO; kept];
    let mut phi_s = vec![Complex64::ZERO; kept];
    let t = state.t;

    stage(model, reference, t, &state.phi_spec, None, &mut ws, &mut k1)?;
    for i in 0..kept {
        phi_s[i] = state.phi_spec[i] + 0.5 * dt * k1[i];
    }
    stage(model, reference, t + 0.5 * dt, &phi_s, None, &mut ws, &mut k2)?;
    for i in 0..kept {
        phi_s[i] = state.phi_spec[i] + 0.5 * dt * k2[i];
    }
    stage(model, reference, t + 0.5 * dt, &phi_s, None, &mut ws, &mut k3)?;
    for i in 0..kept {
        phi_s[i] = state.phi_spec[i] + dt * k3[i];
    }
    stage(model, reference, t + dt, &phi_s, None, &mut ws, &mut k4)?;

    let mut phi_spec = state.phi_spec.clone();
    let w = dt / 6.0;
    for i in 0..kept {
        phi_spec[i] += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let t_new = t + dt;
    let info = stage(model, reference, t_new, &phi_spec, None, &mut ws, &mut k1)?;
    let ricci = chern_ricci(model, &ws.metric)?;
    let mut phi = vec![0.0; model.grid().total()];
    ops.inverse_real(&phi_spec, &mut phi);
    Ok(FlowState {
        t: t_new,
        phi_spec,
        osc_phi: grid::osc(&phi),
        phi,
        metric: ws.metric,
        min_eig: info.min_eig,
        rho_sup: ricci.r.sup_norm(),
        rhs_osc: info.rhs_osc,
        dt,
    })
}

/// Run the flow from the default gauge reference of `g0`.
pub fn run(
    model: &TransverseModel,
    g0: &HermMatField,
    t_prime: f64,
    schedule: &Schedule,
) -> Result<Trajectory> {
    let reference = build_reference(model, g0, t_prime)?;
    run_inner(model, &reference, schedule, None, None)
}

pub fn run_with_reference(
    model: &TransverseModel,
    reference: &ReferenceData,
    schedule: &Schedule,
) -> Result<Trajectory> {
    run_inner(model, reference, schedule, None, None)
}

/// Run with an extra source term added to the flow right side at every
/// stage; used for manufactured-solution studies.
pub fn run_with_forcing(
    model: &TransverseModel,
    reference: &ReferenceData,
    schedule: &Schedule,
    forcing: Forcing,
) -> Result<Trajectory> {
    run_inner(model, reference, schedule, Some(forcing), None)
}

/// Continue from a saved potential spectrum at time `t` after `steps`
/// completed steps. With the schedule that produced the save, the
/// continuation reproduces an uninterrupted run bit for bit: the step-size
/// rule and the sample cadence depend only on the state and the running
/// step count.
pub fn run_resumed(
    model: &TransverseModel,
    reference: &ReferenceData,
    schedule: &Schedule,
    t: f64,
    phi_spec: Vec<Complex64>,
    steps: usize,
) -> Result<Trajectory> {
    run_inner(model, reference, schedule, None, Some((t, phi_spec, steps)))
}

enum Attempt {
    Ok(StageOut),
    Lost { t: f64, point: usize, min_eig: f64 },
}

fn try_stage(
    model: &TransverseModel,
    reference: &ReferenceData,
    t: f64,
    phi_spec: &[Complex64],
    forcing: Option<Forcing>,
    ws: &mut Workspace,
    out: &mut [Complex64],
) -> Result<Attempt> {
    match stage(model, reference, t, phi_spec, forcing, ws, out) {
        Ok(s) => Ok(Attempt::Ok(s)),
        Err(Error::PositivityLoss { t, point, min_eig }) => Ok(Attempt::Lost { t, point, min_eig }),
        Err(e) => Err(e),
    }
}

fn run_inner(
    model: &TransverseModel,
    reference: &ReferenceData,
    schedule: &Schedule,
    forcing: Option<Forcing>,
    start: Option<(f64, Vec<Complex64>, usize)>,
) -> Result<Trajectory> {
    let ops = &model.ops;
    let kept = ops.kept_count();
    let total = model.grid().total();
    let max_symbol = ops.max_symbol();
    let mut ws = Workspace::new(model);
    let (mut t, mut phi_spec, mut steps) = match start {
        Some((t, spec, steps)) => {
            if spec.len() != kept {
                return Err(Error::config(
                    "resume.spectrum",
                    format!("{} coefficients, model keeps {kept}", spec.len()),
                ));
            }
            (t, spec, steps)
        }
        None => (0.0, ops.zero_spectrum(), 0),
    };
    let mut k1 = vec![Complex64::ZERO; kept];
    let mut k2 = vec![Complex64::ZERO; kept];
    let mut k3 = vec![Complex64::ZERO; kept];
    let mut k4 = vec![Complex64::ZERO; kept];
    let mut phi_s = vec![Complex64::ZERO; kept];

    let mut samples = Vec::new();

    let first = match try_stage(model, reference, t, &phi_spec, forcing, &mut ws, &mut k1)? {
        Attempt::Ok(s) => s,
        Attempt::Lost { t, point, min_eig } => {
            return Err(Error::PositivityLoss { t, point, min_eig })
        }
    };
    let sample0 = make_sample(model, reference, t, steps, 0.0, &phi_spec, first.rhs_osc, schedule.store_fields, &mut ws)?;
    let memo = sample0.clone();
    let min_eig0 = sample0.min_eig;
    samples.push(sample0);

    let halt = loop {
        if t >= schedule.t_end || schedule.t_end - t < DT_FLOOR {
            break HaltReason::ReachedEnd;
        }
        if let Some(tol) = schedule.stop_tol {
            if samples.last().map_or(false, |s| s.rho_sup <= tol && s.rhs_osc <= tol) {
                break HaltReason::Converged { t };
            }
        }
        if steps >= schedule.max_steps {
            break HaltReason::StepLimit { t };
        }

        // Exact fixed point: the potential stays bit-for-bit zero, so only
        // the clock advances. All diagnostics are frozen at their t = 0
        // values, which is what direct stepping would reproduce.
        if reference.stationary && forcing.is_none() && SpectralOps::is_zero(&phi_spec) {
            let mut dt = match schedule.policy {
                DtPolicy::Adaptive { c_cfl } => c_cfl * min_eig0 / max_symbol,
                DtPolicy::Fixed { dt } => dt,
            };
            if dt > schedule.t_end - t {
                dt = schedule.t_end - t;
            }
            if !(dt >= DT_FLOOR) {
                break HaltReason::Stalled { t, dt };
            }
            t += dt;
            steps += 1;
            if schedule.sample_every > 0 && steps % schedule.sample_every == 0 {
                let mut s = memo.clone();
                s.t = t;
                s.step = steps;
                s.dt = dt;
                samples.push(s);
            }
            continue;
        }

        let s1 = match try_stage(model, reference, t, &phi_spec, forcing, &mut ws, &mut k1)? {
            Attempt::Ok(s) => s,
            Attempt::Lost { t, point, min_eig } => {
                break HaltReason::PositivityLoss { t, point, min_eig }
            }
        };
        let mut dt = match schedule.policy {
            DtPolicy::Adaptive { c_cfl } => c_cfl * s1.min_eig / max_symbol,
            DtPolicy::Fixed { dt } => dt,
        };
        if dt > schedule.t_end - t {
            dt = schedule.t_end - t;
        }
        if !(dt >= DT_FLOOR) {
            break HaltReason::Stalled { t, dt };
        }

        for i in 0..kept {
            phi_s[i] = phi_spec[i] + 0.5 * dt * k1[i];
        }
        let mid = t + 0.5 * dt;
        let lost = 'stages: {
            match try_stage(model, reference, mid, &phi_s, forcing, &mut ws, &mut k2)? {
                Attempt::Ok(_) => {}
                Attempt::Lost { t, point, min_eig } => break 'stages Some((t, point, min_eig)),
            }
            for i in 0..kept {
                phi_s[i] = phi_spec[i] + 0.5 * dt * k2[i];
            }
            match try_stage(model, reference, mid, &phi_s, forcing, &mut ws, &mut k3)? {
                Attempt::Ok(_) => {}
                Attempt::Lost { t, point, min_eig } => break 'stages Some((t, point, min_eig)),
            }
            for i in 0..kept {
                phi_s[i] = phi_spec[i] + dt * k3[i];
            }
            match try_stage(model, reference, t + dt, &phi_s, forcing, &mut ws, &mut k4)? {
                Attempt::Ok(_) => {}
                Attempt::Lost { t, point, min_eig } => break 'stages Some((t, point, min_eig)),
            }
            None
        };
        if let Some((tl, point, min_eig)) = lost {
            break HaltReason::PositivityLoss { t: tl, point, min_eig };
        }

        let w = dt / 6.0;
        for i in 0..kept {
            phi_spec[i] += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += dt;
        steps += 1;

        if schedule.sample_every > 0 && steps % schedule.sample_every == 0 {
            samples.push(make_sample(
                model,
                reference,
                t,
                steps,
                dt,
                &phi_spec,
                s1.rhs_osc,
                schedule.store_fields,
                &mut ws,
            )?);
        }
    };

    // Materialize the final state from the accepted spectrum.
    let info = match try_stage(model, reference, t, &phi_spec, forcing, &mut ws, &mut k1)? {
        Attempt::Ok(s) => s,
        Attempt::Lost { t, point, min_eig } => {
            return Err(Error::PositivityLoss { t, point, min_eig })
        }
    };
    let ricci = chern_ricci(model, &ws.metric)?;
    let mut phi = vec![0.0; total];
    ops.inverse_real(&phi_spec, &mut phi);
    let state = FlowState {
        t,
        phi_spec,
        osc_phi: grid::osc(&phi),
        phi,
        metric: ws.metric.clone(),
        min_eig: info.min_eig,
        rho_sup: ricci.r.sup_norm(),
        rhs_osc: info.rhs_osc,
        dt: samples.last().map_or(0.0, |s| s.dt),
    };
    if samples.last().map_or(true, |s| s.t < t) {
        samples.push(make_sample(
            model,
            reference,
            t,
            steps,
            state.dt,
            &state.phi_spec,
            info.rhs_osc,
            schedule.store_fields,
            &mut ws,
        )?);
    }
    Ok(Trajectory { samples, state, halt, steps })
}

#[allow(clippy::too_many_arguments)]
fn make_sample(
    model: &TransverseModel,
    reference: &ReferenceData,
    t: f64,
    step: usize,
    dt: f64,
    phi_spec: &[Complex64],
    rhs_osc: f64,
    store: bool,
    ws: &mut Workspace,
) -> Result<Sample> {
    reference.omega_hat_into(t, &mut ws.metric);
    if !SpectralOps::is_zero(phi_spec) {
        model.ops.hessian(phi_spec, &mut ws.hess);
        ws.metric.axpy(1.0, &ws.hess);
    }
    let (min_eig, _) = ws.metric.min_eig_argmin();
    let ricci = chern_ricci(model, &ws.metric)?;
    model.ops.inverse_real(phi_spec, &mut ws.field);
    let total = ws.field.len() as f64;
    let factor = (1..=model.n).product::<usize>() as f64 * (1u64 << model.n) as f64;
    let volume = comp_sum_by(ws.field.len(), |i| ws.metric.log_det_at(i).exp()) / total
        * factor
        * model.leaf_volume;
    Ok(Sample {
        t,
        step,
        dt,
        min_eig,
        rho_sup: ricci.r.sup_norm(),
        osc_phi: grid::osc(&ws.field),
        rhs_osc,
        volume,
        basic_defect: model.metric_defect(&ws.metric),
        phi: store.then(|| ws.field.clone()),
        phi_spec: store.then(|| phi_spec.to_vec()),
        metric: store.then(|| ws.metric.clone()),
    })
}

/// Rebuild the potential from uniformly spaced metric snapshots by
/// integrating the flow right side with the trapezoid rule, and verify that
/// each snapshot is reproduced by the background plus the complex Hessian of
/// the rebuilt potential.
pub fn recover_potential(
    model: &TransverseModel,
    reference: &ReferenceData,
    samples: &[Sample],
) -> Result<Vec<Vec<f64>>> {
    if samples.len() < 3 {
        return Err(Error::config("recover", "need at least three snapshots"));
    }
    let metrics: Vec<&HermMatField> = samples
        .iter()
        .map(|s| {
            s.metric
                .as_ref()
                .ok_or_else(|| Error::config("recover", "snapshots lack stored metrics"))
        })
        .collect::<Result<Vec<_>>>()?;
    let dt = samples[1].t - samples[0].t;
    if !(dt > 0.0) {
        return Err(Error::config("recover", "snapshot times must increase"));
    }
    for pair in samples.windows(2) {
        if ((pair[1].t - pair[0].t) - dt).abs() > 1e-9 * dt {
            return Err(Error::config("recover", "snapshot times are not uniformly spaced"));
        }
    }

    let ops = &model.ops;
    let total = model.grid().total();
    let mut spec = ops.zero_spectrum();
    let mut rates = Vec::with_capacity(samples.len());
    for (s, g) in samples.iter().zip(&metrics) {
        let (min_eig, point) = g.min_eig_argmin();
        if !(min_eig > POS_FLOOR) {
            return Err(Error::PositivityLoss { t: s.t, point, min_eig });
        }
        let mut rhs = vec![0.0; total];
        for (i, r) in rhs.iter_mut().enumerate() {
            *r = g.log_det_at(i) - reference.log_volume[i];
        }
        ops.forward(&rhs, &mut spec);
        model.project_spectrum_checked(&mut spec, BASIC_BOUND)?;
        ops.inverse_real(&spec, &mut rhs);
        rates.push(rhs);
    }

    // Second time differences of the rate field set the trapezoid error
    // scale; the admitted defect grows with the accumulated bound.
    let mut d2_max = vec![0.0f64; samples.len().saturating_sub(1)];
    for k in 1..samples.len() - 1 {
        let mut m = 0.0f64;
        for i in 0..total {
            let d = rates[k + 1][i] - 2.0 * rates[k][i] + rates[k - 1][i];
            m = m.max(d.abs());
        }
        d2_max[k - 1] = d2_max[k - 1].max(m);
        d2_max[k] = m;
    }

    let mut potentials = Vec::with_capacity(samples.len());
    let mut phi = vec![0.0; total];
    potentials.push(phi.clone());
    let mut bound = 0.0f64;
    for k in 1..samples.len() {
        for i in 0..total {
            phi[i] += 0.5 * dt * (rates[k - 1][i] + rates[k][i]);
        }
        bound += dt / 12.0 * d2_max[k - 1];
        let tol = 4.0 * bound + 1e-9;

        // Independent cross-check: the trace part of the snapshot minus the
        // background determines the potential up to its mean.
        let mut trace = vec![0.0; total];
        let hat = reference.omega_hat(samples[k].t);
        for j in 0..model.n {
            for i in 0..total {
                trace[i] += metrics[k].diag[j][i] - hat.diag[j][i];
            }
        }
        ops.forward(&trace, &mut spec);
        model.project_spectrum(&mut spec);
        let psi_spec = ops.poisson_trace(&spec);
        let mut psi = vec![0.0; total];
        ops.inverse_real(&psi_spec, &mut psi);
        let phi_mean = grid::mean(&phi);
        let psi_mean = grid::mean(&psi);
        let mut residual = 0.0f64;
        for i in 0..total {
            let d = (phi[i] - phi_mean) - (psi[i] - psi_mean);
            residual = residual.max(d.abs());
        }
        if residual > tol {
            return Err(Error::ReconstructFailure { residual, tol });
        }
        potentials.push(phi.clone());
    }
    Ok(potentials)
}

/// Fixed-point form of the evolution: the right side gains a `-phi` term, so
/// stationary points solve the elliptic log Monge-Ampere equation against a
/// constant background.
pub struct NormalizedRun {
    pub phi: Vec<f64>,
    pub phi_spec: Vec<Complex64>,
    /// Sup norm of the elliptic residual at the final potential.
    pub residual: f64,
    pub samples: Vec<NormalizedSample>,
    pub halt: HaltReason,
    pub steps: usize,
}

#[derive(Clone, Copy)]
pub struct NormalizedSample {
    pub t: f64,
    pub dt: f64,
    pub residual: f64,
    pub osc_phi: f64,
    pub min_eig: f64,
}

/// Evolve toward the fixed point of the normalized flow on the constant
/// background `theta`, with reference density `e^{log_h}` times the top
/// power of `theta`. `schedule.stop_tol` bounds the elliptic residual.
pub fn run_normalized(
    model: &TransverseModel,
    theta: &DMatrix<Complex64>,
    log_h: &[f64],
    schedule: &Schedule,
) -> Result<NormalizedRun> {
    let ops = &model.ops;
    let total = model.grid().total();
    let kept = ops.kept_count();
    if log_h.len() != total {
        return Err(Error::config("normalized.log_h", "length does not match the grid"));
    }
    let theta_field = HermMatField::constant(model.n, total, theta);
    let (theta_min, _) = theta_field.min_eig_argmin();
    if !(theta_min > POS_FLOOR) {
        return Err(Error::config("normalized.theta", "background is not positive"));
    }
    let log_det_theta = theta_field.log_det_at(0);
    let mut h = log_h.to_vec();
    let defect = model.project_field(&mut h);
    if defect > BASIC_BOUND {
        return Err(Error::BasicDefect { norm: defect, bound: BASIC_BOUND });
    }

    let max_symbol = ops.max_symbol();
    let mut ws = Workspace::new(model);
    let mut phi_spec = ops.zero_spectrum();
    let mut k = [
        vec![Complex64::ZERO; kept],
        vec![Complex64::ZERO; kept],
        vec![Complex64::ZERO; kept],
        vec![Complex64::ZERO; kept],
    ];
    let mut phi_s = vec![Complex64::ZERO; kept];

    let eval = |phi_spec: &[Complex64],
                ws: &mut Workspace,
                out: &mut [Complex64],
                t: f64|
     -> Result<(f64, f64, f64)> {
        for (d, s) in ws.metric.diag.iter_mut().zip(&theta_field.diag) {
            d.copy_from_slice(s);
        }
        for (d, s) in ws.metric.off.iter_mut().zip(&theta_field.off) {
            d.copy_from_slice(s);
        }
        if !SpectralOps::is_zero(phi_spec) {
            model.ops.hessian(phi_spec, &mut ws.hess);
            ws.metric.axpy(1.0, &ws.hess);
        }
        let (min_eig, point) = ws.metric.min_eig_argmin();
        if !(min_eig > POS_FLOOR) {
            return Err(Error::PositivityLoss { t, point, min_eig });
        }
        model.ops.inverse_real(phi_spec, &mut ws.field);
        let mut residual = 0.0f64;
        for i in 0..total {
            ws.rhs[i] = ws.metric.log_det_at(i) - log_det_theta - h[i] - ws.field[i];
            residual = residual.max(ws.rhs[i].abs());
        }
        let osc_phi = grid::osc(&ws.field);
        model.ops.forward(&ws.rhs, out);
        model.project_spectrum_checked(out, BASIC_BOUND)?;
        Ok((min_eig, residual, osc_phi))
    };

    let mut t = 0.0;
    let mut steps = 0usize;
    let mut samples = Vec::new();
    let (min_eig, residual, osc_phi) = eval(&phi_spec, &mut ws, &mut k[0], t)?;
    samples.push(NormalizedSample { t, dt: 0.0, residual, osc_phi, min_eig });

    let halt = loop {
        if t >= schedule.t_end || schedule.t_end - t < DT_FLOOR {
            break HaltReason::ReachedEnd;
        }
        if let Some(tol) = schedule.stop_tol {
            if samples.last().map_or(false, |s| s.residual <= tol) {
                break HaltReason::Converged { t };
            }
        }
        if steps >= schedule.max_steps {
            break HaltReason::StepLimit { t };
        }
        let (min_eig, _, _) = match eval(&phi_spec, &mut ws, &mut k[0], t) {
            Ok(v) => v,
            Err(Error::PositivityLoss { t, point, min_eig }) => {
                break HaltReason::PositivityLoss { t, point, min_eig }
            }
            Err(e) => return Err(e),
        };
        let mut dt = match schedule.policy {
            DtPolicy::Adaptive { c_cfl } => c_cfl * min_eig / max_symbol,
            DtPolicy::Fixed { dt } => dt,
        };
        if dt > schedule.t_end - t {
            dt = schedule.t_end - t;
        }
        if !(dt >= DT_FLOOR) {
            break HaltReason::Stalled { t, dt };
        }
        let mut lost = None;
        for stage_idx in 1..4 {
            let (c, ts) = match stage_idx {
                1 => (0.5 * dt, t + 0.5 * dt),
                2 => (0.5 * dt, t + 0.5 * dt),
                _ => (dt, t + dt),
            };
            let prev = stage_idx - 1;
            for i in 0..kept {
                phi_s[i] = phi_spec[i] + c * k[prev][i];
            }
            let (_, rest) = k.split_at_mut(stage_idx);
            match eval(&phi_s, &mut ws, &mut rest[0], ts) {
                Ok(_) => {}
                Err(Error::PositivityLoss { t, point, min_eig }) => {
                    lost = Some((t, point, min_eig));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some((tl, point, min_eig)) = lost {
            break HaltReason::PositivityLoss { t: tl, point, min_eig };
        }
        let w = dt / 6.0;
        for i in 0..kept {
            phi_spec[i] += w * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        t += dt;
        steps += 1;
        if schedule.sample_every > 0 && steps % schedule.sample_every == 0 {
            let (min_eig, residual, osc_phi) = eval(&phi_spec, &mut ws, &mut k[0], t)?;
            samples.push(NormalizedSample { t, dt, residual, osc_phi, min_eig });
        }
    };

    let (min_eig, residual, osc_phi) = eval(&phi_spec, &mut ws, &mut k[0], t)?;
    if samples.last().map_or(true, |s| s.t < t) {
        samples.push(NormalizedSample {
            t,
            dt: samples.last().map_or(0.0, |s| s.dt),
            residual,
            osc_phi,
            min_eig,
        });
    }
    let mut phi = vec![0.0; total];
    ops.inverse_real(&phi_spec, &mut phi);
    Ok(NormalizedRun { phi, phi_spec, residual, samples, halt, steps })
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// Earliest sample time from which both series stay below tolerance.
    pub at_t: Option<f64>,
    pub final_rho: f64,
    pub final_rhs_osc: f64,
    pub tol: f64,
}

/// Scan a trajectory for curvature decay: converged when the Chern-Ricci
/// sup norm and the oscillation of the potential velocity both end below
/// tolerance, with the onset reported.
pub fn convergence_monitor(trajectory: &Trajectory, tol: f64) -> ConvergenceReport {
    let samples = &trajectory.samples;
    let last = samples.last();
    let final_rho = last.map_or(f64::INFINITY, |s| s.rho_sup);
    let final_rhs_osc = last.map_or(f64::INFINITY, |s| s.rhs_osc);
    let converged = final_rho <= tol && final_rhs_osc <= tol;
    let mut at_t = None;
    if converged {
        for s in samples.iter().rev() {
            if s.rho_sup <= tol && s.rhs_osc <= tol {
                at_t = Some(s.t);
            } else {
                break;
            }
        }
    }
    ConvergenceReport { converged, at_t, final_rho, final_rhs_osc, tol }
}
