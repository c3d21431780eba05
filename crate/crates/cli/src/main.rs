use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use poa_core::harness::{persist, run_suite, write_results, Kind, Overrides, RunRecord, Suite};

/// Runs auction welfare experiments from JSON configs and writes a CSV of results.
#[derive(Parser)]
#[command(name = "poa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Instance PoA estimates.
    Poa(RunArgs),
    /// Regret of candidate equilibrium strategies against grid deviations.
    EqCheck(RunArgs),
    /// Smoothness certificates on case grids.
    SmoothCheck(RunArgs),
    /// Repeated play of no-regret learners.
    Learn(RunArgs),
    /// Smoothness certificates of compositions.
    ComposeCheck(RunArgs),
    /// Every experiment in the config.
    Suite(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces every experiment's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces every experiment's sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// CSV destination; a `.meta.json` sidecar is written next to it.
    /// Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Enumerate discretized priors and strategies instead of sampling.
    #[arg(long)]
    exhaustive: bool,
}

fn run(kind: Option<Kind>, args: RunArgs) -> poa_core::Result<Vec<RunRecord>> {
    let mut suite = Suite::load(&args.config)?;
    if let Some(k) = kind {
        suite.experiments.retain(|e| e.kind == k);
        if suite.experiments.is_empty() {
            return Err(poa_core::Error::Input(format!(
                "{} has no `{}` experiments",
                args.config.display(),
                k.name()
            )));
        }
    }
    suite.apply(&Overrides {
        seed: args.seed,
        samples: args.samples,
        exhaustive: args.exhaustive,
    });
    suite.validate()?;
    let records = run_suite(&suite);
    match &args.out {
        Some(path) => persist(path, &records)?,
        None => write_results(io::stdout().lock(), &records)?,
    }
    Ok(records)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Poa(a) => (Some(Kind::Poa), a),
        Command::EqCheck(a) => (Some(Kind::EqCheck), a),
        Command::SmoothCheck(a) => (Some(Kind::SmoothCheck), a),
        Command::Learn(a) => (Some(Kind::Learn), a),
        Command::ComposeCheck(a) => (Some(Kind::ComposeCheck), a),
        Command::Suite(a) => (None, a),
    };
    match run(kind, args) {
        Ok(records) => {
            for r in &records {
                let verdict = if r.pass { "PASS" } else { "FAIL" };
                eprintln!("{verdict} {} estimate={} stderr={}", r.experiment, r.estimate, r.stderr);
                if let Some(e) = &r.error {
                    eprintln!("  error: {e}");
                }
            }
            if records.iter().all(|r| r.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
