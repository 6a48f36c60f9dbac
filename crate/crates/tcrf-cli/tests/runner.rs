//! End-to-end scenario runs through the library entry point, plus a few
//! process-level checks of the installed binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tcrf::Error;
use tcrf_cli::runner::{run_scenario, RunOptions, Verb};
use tcrf_cli::scenario;

fn opts(verb: Verb, out: &Path) -> RunOptions {
    RunOptions { verb, out_dir: Some(out.to_path_buf()), resume: None, threads: 1, verify: false }
}

fn parse(text: &str) -> scenario::Scenario {
    scenario::from_slice(text.as_bytes()).expect("scenario parses")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn flat_flow_converges_at_the_start_and_writes_artifacts() {
    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.5, "stop_tol": 1e-9}},
        "output": {"csv_every": 10}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&sc, &opts(Verb::Flow, dir.path())).unwrap();
    assert!(out.failure.is_none());
    let flow = out.summary.flow.expect("flow section");
    assert!(flow.converged, "flat start is a fixed point");
    assert!(flow.final_rho_sup <= 1e-12);
    assert_eq!(flow.converged_at, Some(0.0));
    for name in ["summary.json", "flow.csv", "checkpoint_final.tcrf"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let csv = String::from_utf8(read(dir.path(), "flow.csv")).unwrap();
    assert!(csv.starts_with("t,step,dt,"), "header row expected");
    assert!(csv.lines().count() >= 2, "at least the start sample");
}

#[test]
fn reruns_are_byte_identical() {
    let text = r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"conformal": {"amplitude": 0.1, "mode": [1, 0]}},
        "task": {"flow": {"t_end": 0.05}},
        "output": {"csv_every": 10, "checkpoint_every": 20}
    }"#;
    let sc = parse(text);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&sc, &opts(Verb::Flow, a.path())).unwrap();
    run_scenario(&sc, &opts(Verb::Flow, b.path())).unwrap();
    for name in ["summary.json", "flow.csv", "checkpoint_final.tcrf"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs between reruns");
    }
}

#[test]
fn interrupted_flow_resumes_bit_identically() {
    let full = r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"conformal": {"amplitude": 0.1, "mode": [1, 0]}},
        "task": {"flow": {"t_end": 0.08}},
        "output": {"csv_every": 10, "checkpoint_every": 20}
    }"#;
    // Identical run cut off by the step budget; the dt rule and cadences
    // depend only on state and step count, so the tail is reproducible.
    let cut = full.replace("\"t_end\": 0.08", "\"t_end\": 0.08, \"max_steps\": 30");

    let a = tempfile::tempdir().unwrap();
    let done = run_scenario(&parse(full), &opts(Verb::Flow, a.path())).unwrap();
    let full_steps = done.summary.flow.as_ref().unwrap().steps;
    assert!(full_steps > 40, "test needs the budget to bite mid-run, took {full_steps}");

    let b = tempfile::tempdir().unwrap();
    let stopped = run_scenario(&parse(&cut), &opts(Verb::Flow, b.path())).unwrap();
    let f = stopped.failure.expect("step budget failure");
    assert_eq!(f.class, "step_limit");
    assert_eq!(f.exit, 3);
    assert_eq!(stopped.summary.flow.as_ref().unwrap().steps, 30);

    let mut resume_opts = opts(Verb::Flow, b.path());
    resume_opts.resume = Some(b.path().join("checkpoint_final.tcrf"));
    let resumed = run_scenario(&parse(full), &resume_opts).unwrap();
    assert!(resumed.failure.is_none());
    let tail = resumed.summary.flow.expect("flow section");
    assert_eq!(tail.resumed_from_step, Some(30));
    assert_eq!(tail.steps, full_steps);

    assert_eq!(
        read(a.path(), "checkpoint_final.tcrf"),
        read(b.path(), "checkpoint_final.tcrf"),
        "final checkpoint differs after resume"
    );
    assert_eq!(read(a.path(), "flow.csv"), read(b.path(), "flow.csv"), "appended series differs");
    for name in ["checkpoint_00000020.tcrf", "checkpoint_00000040.tcrf"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
}

#[test]
fn resume_refuses_foreign_grids_and_other_tasks() {
    let small = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.01}},
        "output": {"csv_every": 10}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&small, &opts(Verb::Flow, dir.path())).unwrap();
    let ckpt = dir.path().join("checkpoint_final.tcrf");

    let big = parse(
        r#"{
        "model": {"n": 1, "points": 32},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.01}},
        "output": {"csv_every": 10}
    }"#,
    );
    let other = tempfile::tempdir().unwrap();
    let mut o = opts(Verb::Flow, other.path());
    o.resume = Some(ckpt.clone());
    let err = run_scenario(&big, &o).err().expect("wrong grid must be refused");
    assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    let gauduchon = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"gauduchon": {}}
    }"#,
    );
    let mut o = opts(Verb::Gauduchon, other.path());
    o.resume = Some(ckpt);
    let err = run_scenario(&gauduchon, &o).err().expect("resume is flow/t0 only");
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("resume"), "{err}");
}

#[test]
fn corrupted_checkpoint_refuses_resume() {
    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.01}},
        "output": {}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    run_scenario(&sc, &opts(Verb::Flow, dir.path())).unwrap();
    let path = dir.path().join("checkpoint_final.tcrf");
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&path, &bytes).unwrap();

    let mut o = opts(Verb::Flow, dir.path());
    o.resume = Some(path);
    let err = run_scenario(&sc, &o).err().expect("corruption must be refused");
    assert!(err.to_string().contains("checksum"), "{err}");
}

#[test]
fn t0_rerun_replays_the_recorded_probe_schedule() {
    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"t0": {"beta": {"scaled_metric": {"metric": {"flat": {}}, "factor": 0.5}},
                        "search": {"t_hi": 8.0, "tol_rel": 0.01, "max_ascent": 300}}}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let first = run_scenario(&sc, &opts(Verb::T0, dir.path())).unwrap();
    let t0 = first.summary.t0.expect("t0 section");
    assert_eq!(t0.oracle_kind, "finite");
    assert!((t0.oracle_value.unwrap() - 2.0).abs() < 1e-9);
    assert!(t0.probes >= 3);

    let log = dir.path().join("t0_probes.csv");
    let mut o = opts(Verb::T0, dir.path());
    o.resume = Some(log.clone());
    let replay = run_scenario(&sc, &o).unwrap();
    assert!(replay.failure.is_none());
    assert_eq!(replay.summary.t0.unwrap().resume_consistent, Some(true));

    // A truncated log is a prefix of the rerun and still consistent.
    let text = fs::read_to_string(&log).unwrap();
    let shorter: Vec<&str> = text.lines().collect();
    fs::write(&log, format!("{}\n", shorter[..shorter.len() - 1].join("\n"))).unwrap();
    let replay = run_scenario(&sc, &o).unwrap();
    assert_eq!(replay.summary.t0.unwrap().resume_consistent, Some(true));

    // A diverging log is refused.
    let tampered = text.replacen("true", "false", 1);
    assert_ne!(text, tampered, "log should contain a feasible probe");
    fs::write(&log, tampered).unwrap();
    let replay = run_scenario(&sc, &o).unwrap();
    let f = replay.failure.expect("diverging schedule fails");
    assert_eq!(f.class, "checkpoint");
}

#[test]
fn verb_must_match_the_scenario_task() {
    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.5}}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let err = run_scenario(&sc, &opts(Verb::T0, dir.path())).err().expect("mismatch");
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("task"), "{err}");
}

#[test]
fn verify_verb_runs_the_self_checks_alone() {
    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16,
                  "holonomy": [{"u": [[1, 0], [0, 1]], "b": ["1/2", "0"]}]},
        "metric": {"conformal": {"amplitude": 0.1, "mode": [2, 0]}},
        "task": {"flow": {"t_end": 0.5}}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&sc, &opts(Verb::Verify, dir.path())).unwrap();
    assert!(out.failure.is_none());
    let v = out.summary.verify.expect("verify section");
    assert!(v.pass, "self-checks failed: {v:?}");
    assert!(out.summary.flow.is_none(), "verify must not run the task");
}

#[test]
fn gauduchon_and_ibp_tasks_summarize_their_residuals() {
    let sc = parse(
        r#"{
        "model": {"n": 2, "points": 8},
        "metric": {"diagonal": {"entries": [
            {"exp_cos": {"amplitude": 0.2, "mode": [1, 0, 0, 0]}},
            {"constant": 1.0}
        ]}},
        "task": {"gauduchon": {"tol": 1e-8}}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&sc, &opts(Verb::Gauduchon, dir.path())).unwrap();
    assert!(out.failure.is_none());
    let g = out.summary.gauduchon.expect("gauduchon section");
    assert!(g.pass && g.residual <= 1e-8 && g.v_min > 0.0);
    assert!((g.v_mean - 1.0).abs() <= 1e-12, "factor is mean normalized");

    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"ibp_check": {"pairs": 5, "seed": 11}}
    }"#,
    );
    let out = run_scenario(&sc, &opts(Verb::Ibp, dir.path())).unwrap();
    assert!(out.failure.is_none());
    let i = out.summary.ibp_check.expect("ibp section");
    assert!(i.pass && i.worst <= i.tol, "worst {}", i.worst);
}

#[test]
fn symbol_task_records_the_verdict_without_failing_the_process() {
    let sc = parse(
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"symbol": {"operator": "backward_heat", "covectors": 4, "points": 4, "directions": 1}}
    }"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&sc, &opts(Verb::Symbol, dir.path())).unwrap();
    assert!(out.failure.is_none(), "verdict is data, not a process failure");
    let s = out.summary.symbol.expect("symbol section");
    assert!(!s.pass, "backward heat must not certify");
    assert!(s.mu_est < 0.0);
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_tcrf-cli"))
}

#[test]
fn process_rejects_malformed_scenarios_with_exit_two_and_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    // Holonomy matrix has the wrong shape for n = 1.
    fs::write(
        &bad,
        r#"{
        "model": {"n": 1, "points": 16, "holonomy": [{"u": [[1, 0]], "b": []}]},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.5}}
    }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let output = Command::new(bin())
        .args(["flow", "--scenario"])
        .arg(&bad)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("model.holonomy[0].u"), "pointer missing: {stderr}");
    assert!(
        !out_dir.join("summary.json").exists() && !out_dir.join("flow.csv").exists(),
        "rejected input must not leave result artifacts"
    );
}

#[test]
fn process_reports_flow_summaries_on_stdout_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("flat.json");
    fs::write(
        &file,
        r#"{
        "model": {"n": 1, "points": 16},
        "metric": {"flat": {}},
        "task": {"flow": {"t_end": 0.2, "stop_tol": 1e-9}}
    }"#,
    )
    .unwrap();
    let output = Command::new(bin())
        .args(["flow", "--scenario"])
        .arg(&file)
        .arg("--out")
        .arg(dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&stdout).expect("summary JSON on stdout");
    assert_eq!(parsed["task"], "flow");
    assert_eq!(parsed["flow"]["halt"], "converged");
}

mod generator_invariants {
    use proptest::prelude::*;
    use tcrf::holonomy::{HolonomyElement, Rational};
    use tcrf::model::TransverseModel;
    use tcrf_cli::runner::{random_form, Lcg};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        // Whatever the seed, sampled forms come out invariant under the
        // holonomy group, so downstream checks never see a skewed input.
        #[test]
        fn random_forms_stay_basic_under_holonomy(seed in any::<u64>()) {
            let mut gen = HolonomyElement::identity(2);
            gen.b[0] = Rational::new(1, 2).unwrap();
            let model = TransverseModel::new(1, 16, &[gen], 1, 1.0).unwrap();
            let mut rng = Lcg(seed);
            let deg = rng.below(3);
            let form = random_form(&model, deg, 2, &mut rng);
            prop_assert!(form.basic_defect(&model) <= 1e-12);
        }

        // The mode sampler never leaves its band, whatever the state word.
        #[test]
        fn mode_draws_stay_in_band(seed in any::<u64>(), bound in 1i64..5) {
            let mut rng = Lcg(seed);
            for _ in 0..64 {
                let m = rng.mode(bound);
                prop_assert!((-bound..=bound).contains(&m));
            }
        }
    }
}
