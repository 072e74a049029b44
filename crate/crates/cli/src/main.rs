//! `hotv`: higher-order TV denoising, inpainting and diagnostics on PGM images.
//!
//! Exit codes: 0 success, 1 mathematical failure, 2 usage or I/O failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{Failure, SolveKind};
use config::RunConfig;
use report::Report;

#[derive(Parser)]
#[command(name = "hotv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise an image (the whole grid is observed unless a mask is given).
    Denoise(RunArgs),
    /// Fill the black pixels of a mask.
    Inpaint(RunArgs),
    /// Solve and certify the result with a duality gap.
    Certify(RunArgs),
    /// Excess map of the input, its decay table and a regular-point mask.
    Excess(RunArgs),
    /// Distance between the scaled density profile and the TV profile.
    LimitStudy(RunArgs),
    /// Smooth approximation of the hat signal at several accuracies.
    ApproxDemo(RunArgs),
    /// Solve a 1D signal with m = 1 and m = 2 and compare staircasing.
    StaircaseCompare(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Input PGM; a seeded synthetic fixture is used when absent.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Mask PGM: white observed, black unobserved.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output PGM.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(short, long)]
    report: Option<PathBuf>,
    /// CSV table path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Settings as `key=value`, applied last.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Command {
    fn parts(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Denoise(a) => ("denoise", a),
            Command::Inpaint(a) => ("inpaint", a),
            Command::Certify(a) => ("certify", a),
            Command::Excess(a) => ("excess", a),
            Command::LimitStudy(a) => ("limit-study", a),
            Command::ApproxDemo(a) => ("approx-demo", a),
            Command::StaircaseCompare(a) => ("staircase-compare", a),
        }
    }
}

fn build_config(args: &RunArgs, cfg: &mut RunConfig) -> Result<(), config::ConfigError> {
    if let Some(p) = &args.config {
        cfg.apply_file(p)?;
    }
    for (slot, value) in [
        (&mut cfg.input, &args.input),
        (&mut cfg.mask, &args.mask),
        (&mut cfg.output, &args.output),
        (&mut cfg.report, &args.report),
        (&mut cfg.csv, &args.csv),
    ] {
        if value.is_some() {
            slot.clone_from(value);
        }
    }
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()
}

fn dispatch(name: &str, cfg: &RunConfig, rep: &mut Report) -> Result<(), Failure> {
    match name {
        "denoise" => commands::run_solve(cfg, SolveKind::Denoise, rep),
        "inpaint" => commands::run_solve(cfg, SolveKind::Inpaint, rep),
        "certify" => commands::run_solve(cfg, SolveKind::Certify, rep),
        "excess" => commands::run_excess(cfg, rep),
        "limit-study" => commands::run_limit_study(cfg, rep),
        "approx-demo" => commands::run_approx_demo(cfg, rep),
        "staircase-compare" => commands::run_staircase_compare(cfg, rep),
        other => unreachable!("unknown command {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let (name, args) = cli.command.parts();
    let mut cfg = RunConfig::default();
    let built = build_config(args, &mut cfg);
    let mut rep = Report::new(name, cfg.clone());
    let outcome = match built {
        Ok(()) => dispatch(name, &cfg, &mut rep),
        Err(e) => Err(Failure::usage("config", e.0)),
    };
    if let Err(f) = outcome {
        eprintln!("hotv {name}: {}", f.message);
        rep.fail(f.code, f.kind, f.message);
    }
    rep.timing.total_seconds = start.elapsed().as_secs_f64();
    match &cfg.report {
        Some(p) => {
            if let Err(e) = rep.write(p) {
                eprintln!("hotv {name}: cannot write report {}: {e}", p.display());
                return ExitCode::from(commands::EXIT_USAGE as u8);
            }
        }
        None => print!("{}", rep.to_json()),
    }
    ExitCode::from(rep.exit_code as u8)
}
