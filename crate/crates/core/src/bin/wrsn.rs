use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wrsn::harness::{self, Checkpoint, RunConfig};
use wrsn::verify::{gradient_suite, reports_csv, CheckOptions, SUITE_LAYERS};

#[derive(Parser)]
#[command(name = "wrsn", version, about = "Weighted residual networks on CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// key=value, applied after the file; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Test accuracy of a checkpoint on a CIFAR-format directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Finite-difference gradient suite; CSV on stdout, nonzero exit on any failure.
    Gradcheck {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITE_LAYERS))]
        layer: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write the λ listing and histogram of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> wrsn::Result<bool> {
    harness::configure_threads();
    match cli.command {
        Command::Train { config, overrides } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_overrides(&overrides)?;
            let out = harness::train(cfg)?;
            for r in &out.records {
                println!("{}", r.to_csv_row());
            }
        }
        Command::Eval { checkpoint, data } => {
            let acc = harness::evaluate_checkpoint(&Checkpoint::load(&checkpoint)?, &data)?;
            println!("test_acc {acc:.4}");
        }
        Command::Gradcheck { layer, seed } => {
            let reports = gradient_suite(seed, layer.as_deref(), CheckOptions::default())?;
            print!("{}", reports_csv(&reports));
            let failed = reports.iter().filter(|r| !r.passed).count();
            eprintln!("{} checks, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
        Command::Inspect { checkpoint, out } => {
            let snap = harness::inspect(&Checkpoint::load(&checkpoint)?, &out)?;
            print!("{}", snap.listing_csv());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
