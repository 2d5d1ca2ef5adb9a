mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::Overrides;

/// Retrain pre-trained control policies to recover from out-of-distribution
/// states with generated reward and eval programs.
#[derive(Debug, Parser)]
#[command(name = "oodrecover", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train plain SAC on the original task.
    TrainOriginal(commands::TrainOriginalArgs),
    /// Reset in the out-of-distribution configuration and write a snapshot.
    CaptureOod(commands::CaptureArgs),
    /// Generate reward and eval programs from a snapshot.
    Generate(commands::GenerateArgs),
    /// Retrain a policy from the out-of-distribution start.
    Retrain(commands::RetrainArgs),
    /// Evaluate a checkpoint with greedy actions.
    Evaluate(commands::EvaluateArgs),
    /// Write a run's learning curve as CSV.
    ExportCurve(commands::ExportArgs),
    /// Inspect configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    /// Print the built-in defaults as TOML.
    ShowDefaults,
    /// Print the configuration after applying the file and flags.
    Show,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Config {
            action: ConfigAction::ShowDefaults,
        } => commands::show_defaults(),
        Command::Config {
            action: ConfigAction::Show,
        } => commands::show(&cli.overrides),
        Command::TrainOriginal(a) => commands::train_original(&cli.overrides, a),
        Command::CaptureOod(a) => commands::capture_ood(&cli.overrides, a),
        Command::Generate(a) => commands::generate(&cli.overrides, a),
        Command::Retrain(a) => commands::retrain(&cli.overrides, a),
        Command::Evaluate(a) => commands::evaluate(&cli.overrides, a),
        Command::ExportCurve(a) => commands::export_curve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, err) = match f {
                Failure::Usage(e) => (1, e),
                Failure::Runtime(e) => (2, e),
                Failure::PipelineAbort(e) => (3, e),
            };
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
