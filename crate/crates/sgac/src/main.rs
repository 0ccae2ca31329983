use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgac::commands::{cmd_ablate, cmd_compress, cmd_decompress, cmd_report, cmd_train};
use sgac::config::RunConfig;
use sgac::error::exit;
use sgac::Result;

/// Learned lossy image compression with compression-time latent search
/// and bits-back coding.
///
/// Every setting can come from a flat TOML file (`--config`) whose keys
/// are the flag names with underscores; flags override the file.
#[derive(Parser)]
#[command(name = "sgac", version)]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a corpus and write a checkpoint.
    Train(RunConfig),
    /// Compress a PNG image into a bitstream file.
    Compress(RunConfig),
    /// Decompress a bitstream file into a PNG image.
    Decompress(RunConfig),
    /// Run the method comparison over a corpus and write curves and tables.
    Ablate(RunConfig),
    /// Summarize the tables written by `ablate`.
    Report(RunConfig),
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let (flags, cmd): (RunConfig, fn(&RunConfig, &mut dyn std::io::Write) -> Result<()>) = match cli.command {
        Command::Train(f) => (f, cmd_train),
        Command::Compress(f) => (f, cmd_compress),
        Command::Decompress(f) => (f, cmd_decompress),
        Command::Ablate(f) => (f, cmd_ablate),
        Command::Report(f) => (f, cmd_report),
    };
    let cfg = base.overlay(flags);
    cfg.validate()?;
    cmd(&cfg, &mut std::io::stdout().lock())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
