#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::commands::{Outcome, Verdict};
use crate::config::{SimConfig, Validated};
use crate::error::CliError;
use crate::output::OutputDir;

/// Photon counting experiments: jump-model tables, master-equation
/// evolution, trajectory ensembles, g² and the joint-dynamics check.
#[derive(Parser)]
#[command(name = "photocount", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Post-count moments, count rates and g² against their closed forms.
    Tables(RunArgs),
    /// Unconditioned evolution of n̄(t) and p₀(t).
    Evolve(RunArgs),
    /// Trajectory ensemble compared with the master equation.
    Trajectories(RunArgs),
    /// Coincident-time g², analytic and Monte Carlo.
    G2(RunArgs),
    /// Detector–field reduction against the SD superoperators.
    DeriveCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for CSV and JSON output.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the console report.
    #[arg(long)]
    quiet: bool,
}

type Runner = fn(&Validated, &mut OutputDir) -> Result<Outcome, CliError>;

fn run(name: &str, runner: Runner, args: &RunArgs) -> Result<Verdict, CliError> {
    let start = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => config::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let validated = config::validate(cfg)?;
    let mut out = OutputDir::create(&args.out)?;
    let outcome = runner(&validated, &mut out)?;

    let mut files = out.written().to_vec();
    files.push("summary.json".into());
    let summary = json!({
        "command": name,
        "provenance": {
            "version": env!("CARGO_PKG_VERSION"),
            "seed": validated.config.seed,
        },
        "config": validated.config,
        "results": outcome.results,
        "verdict": outcome.verdict,
        "files": files,
    });
    out.json("summary.json", &summary)?;
    out.json(
        "timing.json",
        &json!({ "command": name, "wall_time_seconds": start.elapsed().as_secs_f64() }),
    )?;

    if !args.quiet {
        for line in &outcome.report {
            println!("{line}");
        }
        match &outcome.verdict {
            Verdict::Pass => println!("{name}: pass"),
            Verdict::NumericalFailure(r) | Verdict::StatisticalFailure(r) => println!("{name}: FAIL ({r})"),
        }
    }
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, runner, args): (&str, Runner, &RunArgs) = match &cli.command {
        Command::Tables(a) => ("tables", commands::tables, a),
        Command::Evolve(a) => ("evolve", commands::evolve_cmd, a),
        Command::Trajectories(a) => ("trajectories", commands::trajectories, a),
        Command::G2(a) => ("g2", commands::g2, a),
        Command::DeriveCheck(a) => ("derive-check", commands::derive_check, a),
    };
    match run(name, runner, args) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::NumericalFailure(_)) => ExitCode::from(3),
        Ok(Verdict::StatisticalFailure(_)) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
