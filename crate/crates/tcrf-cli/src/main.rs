//! Entry point. Exit codes: 0 success, 2 rejected input, 3 task failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tcrf::Error;
use tcrf_cli::runner::{run_scenario, Failure, RunOptions, Verb};
use tcrf_cli::scenario;

#[derive(Parser)]
#[command(name = "tcrf", version, about = "Transverse Chern-Ricci flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides the scenario's `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Accepted for interface stability; results must not
    /// depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Run the structural self-checks before the task.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct Resumable {
    #[command(flatten)]
    common: Common,
    /// Continue a flow from a checkpoint, or replay a recorded t0 probe log.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the flow from the scenario's initial metric.
    Flow(Resumable),
    /// Evolve the volume-normalized flow toward its fixed point.
    Nflow(Common),
    /// Estimate the maximal existence time two independent ways.
    T0(Resumable),
    /// Solve for the Gauduchon conformal factor of the initial metric.
    Gauduchon(Common),
    /// Certify ellipticity of an operator's principal symbol.
    Symbol(Common),
    /// Check integration by parts on random basic form pairs.
    Ibp(Common),
    /// Run only the structural self-checks.
    Verify(Common),
}

impl Command {
    fn split(self) -> (Verb, Common, Option<PathBuf>) {
        match self {
            Command::Flow(r) => (Verb::Flow, r.common, r.resume),
            Command::Nflow(c) => (Verb::Nflow, c, None),
            Command::T0(r) => (Verb::T0, r.common, r.resume),
            Command::Gauduchon(c) => (Verb::Gauduchon, c, None),
            Command::Symbol(c) => (Verb::Symbol, c, None),
            Command::Ibp(c) => (Verb::Ibp, c, None),
            Command::Verify(c) => (Verb::Verify, c, None),
        }
    }
}

fn report_error(f: &Failure) {
    let body = serde_json::json!({ "error": { "class": f.class, "detail": f.detail } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("TCRF_LOG")).init();
    let cli = Cli::parse();
    let (verb, common, resume) = cli.command.split();

    let scenario = match scenario::from_path(&common.scenario) {
        Ok(s) => s,
        Err(e) => {
            report_error(&Failure::from_error(&e));
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let opts = RunOptions {
        verb,
        out_dir: common.out,
        resume,
        threads: common.threads,
        verify: common.verify,
    };
    match run_scenario(&scenario, &opts) {
        Ok(outcome) => {
            match serde_json::to_string_pretty(&outcome.summary) {
                Ok(text) => println!("{text}"),
                Err(e) => {
                    report_error(&Failure::from_error(&Error::Json { detail: e.to_string() }));
                    return ExitCode::from(3);
                }
            }
            match outcome.failure {
                Some(f) => {
                    report_error(&f);
                    ExitCode::from(f.exit as u8)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            report_error(&Failure::from_error(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
