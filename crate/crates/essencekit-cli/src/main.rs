//! `essencekit` — essence transfer pipeline CLI.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 backend error,
//! 3 numeric failure.

mod checkpoint;
mod commands;
mod grid;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use essencekit::EssenceError;

#[derive(Parser)]
#[command(
    name = "essencekit",
    version,
    about = "Essence transfer: additive latent shifts with source-consistent semantic edits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize an essence vector for one target and manipulate sources.
    Transfer(commands::TransferArgs),
    /// One-shot essence extraction with a fine-tuned encoder checkpoint.
    Extract(commands::ExtractArgs),
    /// Fine-tune an inversion encoder into an essence encoder.
    TrainEncoder(commands::TrainEncoderArgs),
    /// Score manipulations: identity, semantic and FID metrics.
    Evaluate(commands::EvaluateArgs),
    /// Loss-term ablation harness.
    Ablate(commands::AblateArgs),
    /// Source batch-size sensitivity harness.
    Sensitivity(commands::SensitivityArgs),
    /// Render a target/sources/results grid image.
    Grid(commands::GridArgs),
    /// List known backend profiles.
    Profiles(commands::ProfilesArgs),
}

/// Error category -> exit code. Configuration and input problems are 1,
/// backend contract violations 2, numeric failures 3.
fn exit_code(err: &EssenceError) -> u8 {
    match err {
        EssenceError::InvalidConfig(_)
        | EssenceError::InvalidImage(_)
        | EssenceError::Format(_)
        | EssenceError::EmptyBatch(_)
        | EssenceError::BatchTooSmall { .. }
        | EssenceError::MissingPair { .. }
        | EssenceError::DuplicatePair { .. }
        | EssenceError::MissingInverter
        | EssenceError::Io(_)
        | EssenceError::Json(_) => 1,
        EssenceError::ShapeMismatch { .. }
        | EssenceError::DimMismatch { .. }
        | EssenceError::SpaceMismatch { .. }
        | EssenceError::EncoderMismatch { .. }
        | EssenceError::ZeroEmbedding
        | EssenceError::NonTrainableInverter => 2,
        EssenceError::ZeroVector { .. }
        | EssenceError::NonFinite(_)
        | EssenceError::SingularCovariance => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; those exit cleanly.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Transfer(args) => commands::cmd_transfer(args),
        Command::Extract(args) => commands::cmd_extract(args),
        Command::TrainEncoder(args) => commands::cmd_train_encoder(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Ablate(args) => commands::cmd_ablate(args),
        Command::Sensitivity(args) => commands::cmd_sensitivity(args),
        Command::Grid(args) => commands::cmd_grid(args),
        Command::Profiles(args) => commands::cmd_profiles(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
