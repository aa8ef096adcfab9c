use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use drifttrack::runner::{execute, with_overrides, Experiment, ExperimentConfig, Format};

#[derive(Parser)]
#[command(name = "drifttrack", version, about = "Sample-size selection for tracking drifting minimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track under the mean excess-risk criterion.
    Mean(RunArgs),
    /// Minimal sample size against the target accuracy, drift known.
    Tradeoff(RunArgs),
    /// Track under the high-probability criterion.
    Ihp(RunArgs),
    /// Compare the tracker with matched and mismatched Kalman filters.
    Kalman(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Table destination; the summary goes to `<out>.summary.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Mean(a) => (Experiment::Mean, a),
        Command::Tradeoff(a) => (Experiment::Tradeoff, a),
        Command::Ihp(a) => (Experiment::Ihp, a),
        Command::Kalman(a) => (Experiment::Kalman, a),
    };
    let format = match args.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let result = ExperimentConfig::load(&args.config)
        .and_then(|cfg| with_overrides(cfg, args.seed, args.reps))
        .and_then(|cfg| execute(experiment, &cfg, format, args.out.as_deref(), &mut std::io::stderr()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
