use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use miniops_fleetsim::{run_scenario, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "sim", about = "Run fleet simulation scenarios against a local pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and print the reconciliation report.
    Run {
        scenario: PathBuf,
        /// Virtual seconds per wall second (default: as fast as possible).
        #[arg(long)]
        accel: Option<f64>,
        /// Write the report JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the ground-truth ledger (JSON lines) here.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "error".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            accel,
            report,
            ledger,
        } => {
            let text = std::fs::read_to_string(&scenario)?;
            let s: Scenario = serde_json::from_str(&text)?;
            let opts = RunOptions {
                accel,
                ..RunOptions::default()
            };
            let out = run_scenario(s, &opts)?;
            let json = serde_json::to_string_pretty(&out.report)?;
            println!("{json}");
            if let Some(path) = report {
                std::fs::write(path, &json)?;
            }
            if let Some(path) = ledger {
                std::fs::write(path, out.ledger.to_jsonl())?;
            }
            Ok(out.report.reconciled)
        }
    }
}
