//! Experiment driver. Exit codes: 0 on success, 1 for usage and
//! configuration errors, 2 when a pipeline fails after validation.

mod config;
mod pipelines;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::{parse_file, resolve, FileConfig};
use pipelines::{run_pipeline, Runner};

#[derive(Parser)]
#[command(name = "wanderlab", version, about = "Wandering-domain experiments on the torus")]
struct Cli {
    /// Experiment config (strict TOML); defaults apply when omitted
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (beats the WANDERLAB_OUT environment variable)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Random seed (beats the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also write SVG plots next to the reports
    #[arg(long, global = true)]
    plots: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structure-space metric and the planar dilatation bridge
    Conf,
    /// Build a circle map with wandering gaps and measure its growth
    Denjoy,
    /// Place the disjoint ball system and write its record
    Blowup,
    /// Trace cocycle distortion and fit per-ball flatness
    Distort,
    /// Certify a trapping time and assemble the contradiction report
    Trap,
    /// Run the full demonstration end to end
    DemoTheorem,
}

impl Command {
    fn kind(&self) -> &'static str {
        match self {
            Command::Conf => "conf",
            Command::Denjoy => "denjoy",
            Command::Blowup => "blowup",
            Command::Distort => "distort",
            Command::Trap => "trap",
            Command::DemoTheorem => "demo-theorem",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };

    let file = match &cli.config {
        Some(path) => match parse_file(path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(1);
            }
        },
        None => FileConfig::default(),
    };
    let (resolved, out) = match resolve(cli.command.kind(), &file, cli.seed, cli.out.clone()) {
        Ok(pair) => pair,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };

    let id = resolved.experiment_id();
    let mut runner = match Runner::new(resolved, out.clone(), cli.plots) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot prepare {}: {e}", out.display());
            return ExitCode::from(2);
        }
    };
    let outcome = run_pipeline(&mut runner);
    if let Err(e) = &outcome {
        runner.record_error(e);
    }
    if let Err(e) = runner.flush() {
        eprintln!("cannot write reports to {}: {e}", out.display());
        return ExitCode::from(2);
    }
    match outcome {
        Ok(()) => {
            println!("{id}: wrote {}", out.join("results.jsonl").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pipeline error: {e}");
            ExitCode::from(2)
        }
    }
}
