//! Executes one scenario: builds the model, runs the requested task, and
//! writes summary JSON, CSV series, and checkpoints into the output
//! directory.
//!
//! Artifacts are deterministic: no wall-clock fields, paths recorded as
//! basenames, floats printed in shortest round-trip form. Running the same
//! scenario twice produces byte-identical files.

use num_complex::Complex64;
use serde::Serialize;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use tcrf::flow::{self, HaltReason, Sample, Schedule};
use tcrf::forms::{check_integration_by_parts, subsets, Form};
use tcrf::geometry::gauduchon_factor;
use tcrf::matrix::HermMatField;
use tcrf::max_time::{self, T0};
use tcrf::model::TransverseModel;
use tcrf::symbol::{certify_ellipticity, BasicOperator};
use tcrf::{Error, Result};

use crate::checkpoint::{self, Checkpoint, TaskId};
use crate::scenario::{cos_profile, theta_matrix, OperatorName, Scenario, TaskSpec};

/// Command the user invoked; `Verify` runs only the self-checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Flow,
    Nflow,
    T0,
    Gauduchon,
    Symbol,
    Ibp,
    Verify,
}

impl Verb {
    fn task_name(self) -> &'static str {
        match self {
            Verb::Flow => "flow",
            Verb::Nflow => "normalized_flow",
            Verb::T0 => "t0",
            Verb::Gauduchon => "gauduchon",
            Verb::Symbol => "symbol",
            Verb::Ibp => "ibp_check",
            Verb::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub verb: Verb,
    /// Overrides the scenario's output directory.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from (flow) or probe log to replay (t0).
    pub resume: Option<PathBuf>,
    /// Accepted for interface stability; evaluation is single threaded and
    /// results must not depend on it.
    pub threads: usize,
    /// Run the self-check suite before the task.
    pub verify: bool,
}

/// Task-reported failure: artifacts are on disk, the process should still
/// exit nonzero.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub class: String,
    pub detail: String,
    pub exit: i32,
}

impl Failure {
    fn new(class: &str, detail: String, exit: i32) -> Self {
        Failure { class: class.to_string(), detail, exit }
    }

    pub fn from_error(e: &Error) -> Self {
        Failure::new(e.class(), e.to_string(), e.exit_code())
    }
}

pub struct RunOutcome {
    pub summary: Summary,
    pub failure: Option<Failure>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub task: &'static str,
    pub n: usize,
    pub points: usize,
    pub group_order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_flow: Option<NormalizedSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<MaxTimeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gauduchon: Option<GauduchonSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol: Option<SymbolSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ibp_check: Option<IbpSummary>,
}

#[derive(Debug, Serialize)]
pub struct VerifySummary {
    /// Sup norm of d(d(probe)) over scalar and one-form probes.
    pub d_squared_sup: f64,
    /// Worst integration-by-parts residual over deterministic probe pairs.
    pub ibp_worst: f64,
    /// Holonomy defect of the initial metric.
    pub metric_basic_defect: f64,
    /// Defect removed by a second basic projection of an already projected
    /// field; nonzero means the projector is not idempotent.
    pub projection_second_pass: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct FlowSummary {
    pub t_end: f64,
    pub t_final: f64,
    pub steps: usize,
    pub halt: String,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged_at: Option<f64>,
    pub final_rho_sup: f64,
    pub final_rhs_osc: f64,
    pub final_min_eig: f64,
    pub final_osc_phi: f64,
    pub volume_initial: f64,
    pub volume_final: f64,
    /// Largest relative volume deviation from the initial value over the
    /// recorded samples.
    pub volume_drift_rel: f64,
    pub basic_defect_max: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resumed_from_step: Option<usize>,
    pub series: String,
    pub checkpoint_final: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct NormalizedSummary {
    pub t_final: f64,
    pub steps: usize,
    pub halt: String,
    pub residual: f64,
    pub stop_tol: f64,
    pub converged: bool,
    pub samples: usize,
    pub series: String,
}

#[derive(Debug, Serialize)]
pub struct MaxTimeSummary {
    pub oracle_kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_value: Option<f64>,
    pub oracle_theta_max: f64,
    pub search_kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_value: Option<f64>,
    /// |oracle - search| / oracle when both are finite.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement_rel: Option<f64>,
    pub probes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_margin: Option<f64>,
    /// Set when a prior probe log was replayed against this run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume_consistent: Option<bool>,
    pub series: String,
}

#[derive(Debug, Serialize)]
pub struct GauduchonSummary {
    pub residual: f64,
    pub tol: f64,
    pub iterations: usize,
    pub u_sup: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_mean: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct SymbolSummary {
    pub operator: &'static str,
    pub order: usize,
    pub mu_est: f64,
    pub mu_min: f64,
    pub samples: usize,
    pub unresolved: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct IbpSummary {
    pub pairs: usize,
    pub max_mode: i64,
    pub seed: u64,
    pub worst: f64,
    pub tol: f64,
    pub pass: bool,
}

fn halt_name(h: &HaltReason) -> String {
    match h {
        HaltReason::ReachedEnd => "reached_end".into(),
        HaltReason::Converged { .. } => "converged".into(),
        HaltReason::PositivityLoss { .. } => "positivity_loss".into(),
        HaltReason::Stalled { .. } => "stalled".into(),
        HaltReason::StepLimit { .. } => "step_limit".into(),
    }
}

fn halt_failure(h: &HaltReason) -> Option<Failure> {
    match h {
        HaltReason::ReachedEnd | HaltReason::Converged { .. } => None,
        HaltReason::PositivityLoss { t, point, min_eig } => Some(Failure::from_error(
            &Error::PositivityLoss { t: *t, point: *point, min_eig: *min_eig },
        )),
        HaltReason::Stalled { t, dt } => {
            Some(Failure::from_error(&Error::Stalled { t: *t, dt: *dt }))
        }
        HaltReason::StepLimit { t } => Some(Failure::new(
            "step_limit",
            format!("step budget exhausted at t = {t:.6}"),
            3,
        )),
    }
}

/// Positive gcd treating zero as "absent".
fn cadence_gcd(a: usize, b: usize) -> usize {
    if a == 0 {
        return b;
    }
    if b == 0 {
        return a;
    }
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunOutcome> {
    if opts.threads == 0 {
        return Err(Error::config("threads", "must be at least 1"));
    }
    if opts.verb != Verb::Verify && opts.verb.task_name() != sc.task.name() {
        return Err(Error::config(
            "task",
            format!("scenario declares task '{}', command runs '{}'", sc.task.name(), opts.verb.task_name()),
        ));
    }
    if opts.resume.is_some() && !matches!(opts.verb, Verb::Flow | Verb::T0) {
        return Err(Error::config("resume", "only flow and t0 runs can resume"));
    }

    let model = sc.build_model()?;
    let g0 = sc.build_metric(&model)?;

    let out_dir: PathBuf = match (&opts.out_dir, &sc.output.directory) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("."),
    };
    fs::create_dir_all(&out_dir)?;

    let mut summary = Summary {
        task: if opts.verb == Verb::Verify { "verify" } else { sc.task.name() },
        n: model.n,
        points: model.grid().len,
        group_order: model.group_order(),
        verify: None,
        flow: None,
        normalized_flow: None,
        t0: None,
        gauduchon: None,
        symbol: None,
        ibp_check: None,
    };
    let mut failure = None;

    if opts.verify || opts.verb == Verb::Verify {
        let v = verify_suite(&model, &g0);
        if !v.pass {
            failure = Some(Failure::new(
                "basic_defect",
                format!(
                    "self-check failed: d2 {:.3e}, ibp {:.3e}, metric defect {:.3e}, reprojection {:.3e}",
                    v.d_squared_sup, v.ibp_worst, v.metric_basic_defect, v.projection_second_pass
                ),
                3,
            ));
        }
        summary.verify = Some(v);
    }

    if failure.is_none() && opts.verb != Verb::Verify {
        failure = match &sc.task {
            TaskSpec::Flow(t) => run_flow(sc, t, &model, &g0, &out_dir, opts, &mut summary)?,
            TaskSpec::NormalizedFlow(t) => {
                run_nflow(t, sc.output.csv_every, &model, &out_dir, &mut summary)?
            }
            TaskSpec::T0(t) => run_t0(sc, t, &model, &g0, &out_dir, opts, &mut summary)?,
            TaskSpec::Gauduchon(t) => run_gauduchon(t, &model, &g0, &mut summary)?,
            TaskSpec::Symbol(t) => run_symbol(t, &model, &g0, &mut summary)?,
            TaskSpec::IbpCheck(t) => run_ibp(t, &model, &mut summary)?,
        };
    }

    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    fs::write(out_dir.join("summary.json"), text)?;
    Ok(RunOutcome { summary, failure })
}

const FLOW_HEADER: &str = "t,step,dt,min_eig,rho_sup,osc_phi,rhs_osc,volume,basic_defect\n";

fn flow_row(s: &Sample) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        s.t, s.step, s.dt, s.min_eig, s.rho_sup, s.osc_phi, s.rhs_osc, s.volume, s.basic_defect
    )
}

#[allow(clippy::too_many_arguments)]
fn run_flow(
    sc: &Scenario,
    task: &crate::scenario::FlowTask,
    model: &TransverseModel,
    g0: &HermMatField,
    out_dir: &Path,
    opts: &RunOptions,
    summary: &mut Summary,
) -> Result<Option<Failure>> {
    if !(task.t_end > 0.0 && task.t_end.is_finite()) {
        return Err(Error::config("task.flow.t_end", "must be positive"));
    }
    if !(task.t_prime > 0.0 && task.t_prime.is_finite()) {
        return Err(Error::config("task.flow.t_prime", "must be positive"));
    }
    if let Some(tol) = task.stop_tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::config("task.flow.stop_tol", "must be positive"));
        }
    }
    let reference = flow::build_reference(model, g0, task.t_prime)?;
    let ckpt_every = sc.output.checkpoint_every;
    let schedule = Schedule {
        t_end: task.t_end,
        policy: task.dt.policy()?,
        sample_every: cadence_gcd(sc.output.csv_every, ckpt_every),
        store_fields: ckpt_every > 0,
        max_steps: task.max_steps,
        stop_tol: task.stop_tol,
    };

    let resume_step = match &opts.resume {
        Some(path) => {
            let c = Checkpoint::read(path)?;
            let (spec, _, _) = c.flow_parts(model, TaskId::Flow)?;
            let steps = c.steps as usize;
            Some((c.t, spec, steps))
        }
        None => None,
    };
    let resumed_from = resume_step.as_ref().map(|(_, _, s)| *s);
    let trajectory = match resume_step {
        Some((t, spec, steps)) => flow::run_resumed(model, &reference, &schedule, t, spec, steps)?,
        None => flow::run_with_reference(model, &reference, &schedule)?,
    };

    // Series rows; a resumed run appends only the steps it actually took.
    let csv_path = out_dir.join("flow.csv");
    let skip_through = resumed_from.unwrap_or(0);
    {
        let fresh = resumed_from.is_none() || !csv_path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(&csv_path)?;
        let mut buf = String::new();
        if fresh {
            buf.push_str(FLOW_HEADER);
        }
        for s in &trajectory.samples {
            if resumed_from.is_some() && s.step <= skip_through {
                continue;
            }
            buf.push_str(&flow_row(s));
        }
        f.write_all(buf.as_bytes())?;
    }

    let mut checkpoints = Vec::new();
    if ckpt_every > 0 {
        for s in &trajectory.samples {
            if s.step == 0 || s.step % ckpt_every != 0 || s.step <= skip_through {
                continue;
            }
            let (Some(spec), Some(phi), Some(metric)) = (&s.phi_spec, &s.phi, &s.metric) else {
                continue;
            };
            let name = format!("checkpoint_{:08}.tcrf", s.step);
            Checkpoint::from_flow_state(TaskId::Flow, model, s.t, s.step, spec, phi, metric)
                .write(&out_dir.join(&name))?;
            checkpoints.push(name);
        }
    }
    let final_name = "checkpoint_final.tcrf".to_string();
    checkpoint::from_state(TaskId::Flow, model, &trajectory.state, trajectory.steps)
        .write(&out_dir.join(&final_name))?;

    let report = flow::convergence_monitor(&trajectory, task.stop_tol.unwrap_or(flow::TOL_CONVERGENCE));
    let v0 = trajectory.samples.first().map_or(0.0, |s| s.volume);
    let mut drift = 0.0f64;
    let mut defect = 0.0f64;
    for s in &trajectory.samples {
        if v0 > 0.0 {
            drift = drift.max(((s.volume - v0) / v0).abs());
        }
        defect = defect.max(s.basic_defect);
    }
    summary.flow = Some(FlowSummary {
        t_end: task.t_end,
        t_final: trajectory.state.t,
        steps: trajectory.steps,
        halt: halt_name(&trajectory.halt),
        converged: report.converged,
        converged_at: report.at_t,
        final_rho_sup: trajectory.state.rho_sup,
        final_rhs_osc: trajectory.state.rhs_osc,
        final_min_eig: trajectory.state.min_eig,
        final_osc_phi: trajectory.state.osc_phi,
        volume_initial: v0,
        volume_final: trajectory.samples.last().map_or(v0, |s| s.volume),
        volume_drift_rel: drift,
        basic_defect_max: defect,
        samples: trajectory.samples.len(),
        resumed_from_step: resumed_from,
        series: "flow.csv".into(),
        checkpoint_final: final_name,
        checkpoints,
    });
    Ok(halt_failure(&trajectory.halt))
}

fn run_nflow(
    task: &crate::scenario::NormalizedTask,
    csv_every: usize,
    model: &TransverseModel,
    out_dir: &Path,
    summary: &mut Summary,
) -> Result<Option<Failure>> {
    if !(task.t_end > 0.0 && task.t_end.is_finite()) {
        return Err(Error::config("task.normalized_flow.t_end", "must be positive"));
    }
    if !(task.stop_tol > 0.0 && task.stop_tol.is_finite()) {
        return Err(Error::config("task.normalized_flow.stop_tol", "must be positive"));
    }
    let theta = theta_matrix(task, model.n)?;
    let log_h = match &task.log_density {
        Some(gen) => cos_profile(model, gen, "task.normalized_flow.log_density")?,
        None => vec![0.0; model.grid().total()],
    };
    // The early-stop check fires at sample rows, so keep a positive cadence.
    let schedule = Schedule {
        t_end: task.t_end,
        policy: task.dt.policy()?,
        sample_every: if csv_every > 0 { csv_every } else { 50 },
        store_fields: false,
        max_steps: task.max_steps,
        stop_tol: Some(task.stop_tol),
    };
    let run = flow::run_normalized(model, &theta, &log_h, &schedule)?;

    let mut buf = String::from("t,dt,residual,osc_phi,min_eig\n");
    for s in &run.samples {
        buf.push_str(&format!("{},{},{},{},{}\n", s.t, s.dt, s.residual, s.osc_phi, s.min_eig));
    }
    fs::write(out_dir.join("nflow.csv"), buf)?;

    summary.normalized_flow = Some(NormalizedSummary {
        t_final: run.samples.last().map_or(0.0, |s| s.t),
        steps: run.steps,
        halt: halt_name(&run.halt),
        residual: run.residual,
        stop_tol: task.stop_tol,
        converged: run.residual <= task.stop_tol,
        samples: run.samples.len(),
        series: "nflow.csv".into(),
    });
    Ok(halt_failure(&run.halt))
}

fn t0_parts(t0: &T0) -> (&'static str, Option<f64>) {
    match t0 {
        T0::Finite(v) => ("finite", Some(*v)),
        T0::AtLeast(v) => ("at_least", Some(*v)),
        T0::Infinite => ("infinite", None),
    }
}

fn run_t0(
    sc: &Scenario,
    task: &crate::scenario::MaxTimeTask,
    model: &TransverseModel,
    g0: &HermMatField,
    out_dir: &Path,
    opts: &RunOptions,
    summary: &mut Summary,
) -> Result<Option<Failure>> {
    let beta = sc.build_beta(model, g0, &task.beta)?;
    let cfg = task.search.apply();
    let oracle = max_time::t0_oracle(model, g0, &beta)?;
    let report = max_time::t0_feasibility(model, g0, &beta, &cfg)?;

    // The probe schedule is a pure function of the configuration, so a rerun
    // must retrace a recorded log probe for probe.
    let mut resume_consistent = None;
    let mut failure = None;
    if let Some(prior) = &opts.resume {
        let text = fs::read_to_string(prior)?;
        let mut recorded = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                continue;
            }
            let mut cols = line.split(',');
            let (Some(ts), Some(fs_)) = (cols.next(), cols.next()) else {
                return Err(Error::Checkpoint { detail: format!("probe log line {i} is malformed") });
            };
            let t: f64 = ts
                .parse()
                .map_err(|_| Error::Checkpoint { detail: format!("probe log line {i}: bad time") })?;
            let feas: bool = fs_
                .parse()
                .map_err(|_| Error::Checkpoint { detail: format!("probe log line {i}: bad flag") })?;
            recorded.push((t, feas));
        }
        let replayed = recorded.len() <= report.probes.len()
            && recorded.iter().zip(&report.probes).all(|(a, b)| a.0 == b.0 && a.1 == b.1);
        resume_consistent = Some(replayed);
        if !replayed {
            failure = Some(Failure::new(
                "checkpoint",
                "recorded probe schedule is not a prefix of the rerun".to_string(),
                3,
            ));
        }
    }

    let mut buf = String::from("t,feasible\n");
    for (t, feas) in &report.probes {
        buf.push_str(&format!("{t},{feas}\n"));
    }
    fs::write(out_dir.join("t0_probes.csv"), buf)?;

    let (oracle_kind, oracle_value) = t0_parts(&oracle.t0);
    let (search_kind, search_value) = t0_parts(&report.t0);
    let agreement_rel = match (&oracle.t0, &report.t0) {
        (T0::Finite(a), T0::Finite(b)) if *a > 0.0 => Some((a - b).abs() / a),
        _ => None,
    };
    summary.t0 = Some(MaxTimeSummary {
        oracle_kind,
        oracle_value,
        oracle_theta_max: oracle.theta_max,
        search_kind,
        search_value,
        agreement_rel,
        probes: report.probes.len(),
        certificate_t: report.certificate.as_ref().map(|c| c.t),
        certificate_margin: report.certificate.as_ref().map(|c| c.margin),
        resume_consistent,
        series: "t0_probes.csv".into(),
    });
    Ok(failure)
}

fn run_gauduchon(
    task: &crate::scenario::GauduchonTask,
    model: &TransverseModel,
    g0: &HermMatField,
    summary: &mut Summary,
) -> Result<Option<Failure>> {
    if !(task.tol > 0.0 && task.tol.is_finite()) {
        return Err(Error::config("task.gauduchon.tol", "must be positive"));
    }
    let solve = gauduchon_factor(model, g0)?;
    let u_sup = tcrf::grid::sup_norm(&solve.u);
    let v_min = solve.v.iter().copied().fold(f64::INFINITY, f64::min);
    let v_max = solve.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let v_mean = solve.v.iter().sum::<f64>() / solve.v.len() as f64;
    let pass = solve.residual <= task.tol && v_min > 0.0;
    summary.gauduchon = Some(GauduchonSummary {
        residual: solve.residual,
        tol: task.tol,
        iterations: solve.iterations,
        u_sup,
        v_min,
        v_max,
        v_mean,
        pass,
    });
    Ok(if pass {
        None
    } else {
        Some(Failure::from_error(&Error::GaugeFailure {
            detail: format!("residual {:.3e} exceeds {:.3e} or factor not positive", solve.residual, task.tol),
        }))
    })
}

fn run_symbol(
    task: &crate::scenario::SymbolTask,
    model: &TransverseModel,
    g0: &HermMatField,
    summary: &mut Summary,
) -> Result<Option<Failure>> {
    if !(task.mu_min > 0.0 && task.mu_min.is_finite()) {
        return Err(Error::config("task.symbol.mu_min", "must be positive"));
    }
    let op = match task.operator {
        OperatorName::Laplacian => BasicOperator::laplacian(model),
        OperatorName::BackwardHeat => BasicOperator::backward_heat(model),
        OperatorName::Bilaplacian => BasicOperator::bilaplacian(model),
        OperatorName::MaFlow => BasicOperator::ma_flow(model, g0),
    };
    let zeros = vec![0.0; model.grid().total()];
    let report = certify_ellipticity(&op, &zeros, &task.budget(), task.mu_min)?;
    summary.symbol = Some(SymbolSummary {
        operator: task.operator.as_str(),
        order: op.order,
        mu_est: report.mu_est,
        mu_min: report.mu_min,
        samples: report.samples.len(),
        unresolved: report.unresolved,
        oracle_gap: report.oracle_gap,
        pass: report.pass,
    });
    // A completed certification with a negative verdict is still a completed
    // task; the verdict lives in the summary.
    Ok(None)
}

/// Multiplicative congruential mix; good enough to spread probe modes, and
/// stable across platforms.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform in [-bound, bound].
    pub fn mode(&mut self, bound: i64) -> i64 {
        let span = 2 * bound + 1;
        (self.next_u64() >> 1) as i64 % span - bound
    }
}

/// Homogeneous degree-`deg` form with a few random band-limited modes in
/// every component, projected basic.
pub fn random_form(
    model: &TransverseModel,
    deg: usize,
    max_mode: i64,
    rng: &mut Lcg,
) -> Form {
    let grid = model.grid();
    let total = grid.total();
    let n = model.n;
    let mut form = Form::zero(n, total);
    for p in 0..=deg.min(n) {
        let q = deg - p;
        if q > n {
            continue;
        }
        let comps = subsets(n, p).len() * subsets(n, q).len();
        for idx in 0..comps {
            let mut field = vec![Complex64::ZERO; total];
            for _ in 0..3 {
                let m: Vec<i64> = (0..grid.axes()).map(|_| rng.mode(max_mode)).collect();
                let c = Complex64::new(rng.unit() - 0.5, rng.unit() - 0.5);
                for (i, v) in field.iter_mut().enumerate() {
                    let x = grid.point(i);
                    let th = std::f64::consts::TAU
                        * m.iter().zip(&x).map(|(mi, xi)| *mi as f64 * xi).sum::<f64>();
                    *v += c * Complex64::new(th.cos(), th.sin());
                }
            }
            form.set_component(p, q, idx, field);
        }
    }
    form.project_basic(model);
    form
}

/// Degree split for an integration-by-parts pair: alpha wedge d(beta) must
/// land in top degree.
pub fn ibp_degrees(n: usize, rng: &mut Lcg) -> (usize, usize) {
    let da = rng.below(2 * n);
    (da, 2 * n - 1 - da)
}

fn run_ibp(
    task: &crate::scenario::IbpTask,
    model: &TransverseModel,
    summary: &mut Summary,
) -> Result<Option<Failure>> {
    if task.pairs == 0 {
        return Err(Error::config("task.ibp_check.pairs", "must be at least 1"));
    }
    if task.max_mode < 1 {
        return Err(Error::config("task.ibp_check.max_mode", "must be at least 1"));
    }
    let cut = model.grid().dealias_cut() as i64;
    if 2 * task.max_mode > cut {
        return Err(Error::config(
            "task.ibp_check.max_mode",
            format!("products must stay within the dealiased band (2 max_mode <= {cut})"),
        ));
    }
    if !(task.tol > 0.0 && task.tol.is_finite()) {
        return Err(Error::config("task.ibp_check.tol", "must be positive"));
    }
    let mut rng = Lcg(task.seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493));
    let mut worst = 0.0f64;
    for _ in 0..task.pairs {
        let (da, db) = ibp_degrees(model.n, &mut rng);
        let alpha = random_form(model, da, task.max_mode, &mut rng);
        let beta = random_form(model, db, task.max_mode, &mut rng);
        worst = worst.max(check_integration_by_parts(&alpha, &beta, &model.ops, model.leaf_volume));
    }
    let pass = worst <= task.tol;
    summary.ibp_check = Some(IbpSummary {
        pairs: task.pairs,
        max_mode: task.max_mode,
        seed: task.seed,
        worst,
        tol: task.tol,
        pass,
    });
    Ok(if pass {
        None
    } else {
        Some(Failure::from_error(&Error::BasicDefect { norm: worst, bound: task.tol }))
    })
}

/// Structural self-checks that do not depend on the task: the exterior
/// differential squares to zero, integration by parts holds on fixed probe
/// pairs, the initial metric is holonomy invariant, and the basic projector
/// is idempotent.
pub fn verify_suite(model: &TransverseModel, g0: &HermMatField) -> VerifySummary {
    let grid = model.grid();
    let total = grid.total();
    let mut rng = Lcg(7);

    let mut d2 = 0.0f64;
    for deg in 0..(2 * model.n) {
        let probe = random_form(model, deg, 2.min(grid.dealias_cut() as i64 / 2).max(1), &mut rng);
        let dd = probe.exterior(&model.ops).exterior(&model.ops);
        d2 = d2.max(dd.sup_norm());
    }

    let mut ibp_worst = 0.0f64;
    let band = 2.min(grid.dealias_cut() as i64 / 2).max(1);
    for _ in 0..5 {
        let (da, db) = ibp_degrees(model.n, &mut rng);
        let alpha = random_form(model, da, band, &mut rng);
        let beta = random_form(model, db, band, &mut rng);
        ibp_worst = ibp_worst.max(check_integration_by_parts(&alpha, &beta, &model.ops, model.leaf_volume));
    }

    let metric_defect = model.metric_defect(g0);

    let mut field: Vec<f64> = (0..total).map(|_| rng.unit() - 0.5).collect();
    model.project_field(&mut field);
    let second = model.project_field(&mut field);

    let pass = d2 <= 1e-9 && ibp_worst <= 1e-9 && metric_defect <= 1e-10 && second <= 1e-12;
    VerifySummary {
        d_squared_sup: d2,
        ibp_worst,
        metric_basic_defect: metric_defect,
        projection_second_pass: second,
        pass,
    }
}
