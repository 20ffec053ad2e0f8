use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lesionfuse_cli::commands::{
    cmd_eval, cmd_fuse, cmd_ingest_csv, cmd_preprocess, cmd_report, cmd_simulate, EvalArgs, FuseArgs, IngestCsvArgs,
    PreprocessArgs, ReportArgs, SimulateArgs,
};
use lesionfuse_cli::{CliError, LONG_VERSION, THREADS_ENV};

/// Fuse, evaluate and simulate lesion detections.
#[derive(Debug, Parser)]
#[command(name = "lesionfuse", version = LONG_VERSION)]
struct Cli {
    /// Worker threads for per-image work.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge detection runs with Weighted Boxes Fusion.
    Fuse(FuseArgs),
    /// Score detections against ground truth (FROC, mAP).
    Eval(EvalArgs),
    /// Generate a synthetic scene and simulated detector outputs.
    Simulate(SimulateArgs),
    /// Build a windowed, equalized 3-slice image from a HU volume.
    Preprocess(PreprocessArgs),
    /// Combine report JSON files into one table.
    Report(ReportArgs),
    /// Convert a CSV of lesion annotations through a column mapping.
    IngestCsv(IngestCsvArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads.filter(|n| *n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| ()),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
        Command::IngestCsv(a) => cmd_ingest_csv(&a).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lesionfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
