use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convsep::commands;
use convsep::{Overrides, RunConfig};

/// Convolutive blind source separation for multichannel surface EMG.
#[derive(Debug, Parser)]
#[command(name = "convsep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic mixture and its ground truth.
    Simulate(RunArgs),
    /// Learn a demixing bank and apply it to a mixture.
    Separate(RunArgs),
    /// Score separated outputs against ground truth.
    Evaluate(RunArgs),
    /// Simulate, separate and evaluate in one run.
    Pipeline(RunArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON run configuration (`{}` selects every default).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Demixing filter length L (power of two); M = 2L bins.
    #[arg(long)]
    filter_length: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    /// Maximum number of separation iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "convsep_out")]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> convsep::Result<RunConfig> {
        RunConfig::load(
            &self.config,
            &Overrides {
                seed: self.seed,
                filter_length: self.filter_length,
                step_size: self.step_size,
                iterations: self.iterations,
            },
        )
    }
}

fn run(cli: &Cli) -> convsep::Result<()> {
    match &cli.command {
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let sc = commands::simulate(&cfg, &args.out)?;
            println!(
                "simulated {} channels x {} samples into {}",
                sc.mixture.channel_count(),
                sc.mixture.len(),
                args.out.display()
            );
        }
        Command::Separate(args) => {
            let cfg = args.load()?;
            let run = commands::separate(&cfg, &args.out)?;
            println!(
                "separated with L = {} after {} iterations (converged: {})",
                run.bank.length(),
                run.trace.len(),
                run.converged
            );
        }
        Command::Evaluate(args) => {
            let cfg = args.load()?;
            print_report(&commands::evaluate(&cfg, &args.out)?);
        }
        Command::Pipeline(args) => {
            let cfg = args.load()?;
            print_report(&commands::pipeline(&cfg, &args.out)?);
        }
    }
    Ok(())
}

fn print_report(r: &convsep_core::metrics::SeparationReport) {
    for (q, kind) in r.assigned_kinds.iter().enumerate() {
        println!(
            "output {}: {kind:<16} SIR {:7.2} dB  improvement {:7.2} dB  SDR {:7.2} dB",
            q + 1,
            r.sir_db[q],
            r.sir_improvement_db[q],
            r.sdr_db[q]
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
