mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wood_core::Error;

use commands::{BenchArgs, EvaluateArgs, GenDataArgs, ScoreArgs, TrainArgs};

/// Wasserstein-based out-of-distribution detection.
#[derive(Debug, Parser)]
#[command(name = "wood", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
    /// Train a classifier with the WOOD loss.
    Train(TrainArgs),
    /// Calibrate a threshold and report TNR, FNR and AUROC.
    Evaluate(EvaluateArgs),
    /// Score samples with a trained checkpoint.
    Score(ScoreArgs),
    /// Time the Sinkhorn-path score under both cost matrices.
    BenchScore(BenchArgs),
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Dimension(_)
        | Error::Capacity(_)
        | Error::Index { .. }
        | Error::Input(_)
        | Error::Format { .. }
        | Error::Io(_) => EXIT_DATA,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("WOOD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("WOOD_THREADS must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("wood: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Score(a) => commands::score(a),
        Command::BenchScore(a) => commands::bench_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wood: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
