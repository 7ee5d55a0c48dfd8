use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use efi::config::{load_config, RunConfig};
use efi::error::Result;
use efi::pipeline;

#[derive(Parser)]
#[command(
    name = "efi",
    version,
    about = "Enhanced forest inventory: plots + LiDAR + imagery -> attributes and habitat"
)]
struct Cli {
    /// Run configuration file (key = value lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the configured random seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the configured output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (plots, cloud, bands, truth) under <out>/inputs
    Simulate,
    /// Build the terrain model, tessellate, and grow reporting units
    Segment,
    /// Compute the per-cell LiDAR and spectral feature table
    Features,
    /// Compile plot/tree/condition tables into per-plot attributes
    CompilePlots,
    /// Train cross-validated elastic-net models, one per attribute
    Train,
    /// Predict attributes per cell and aggregate to reporting units
    Predict,
    /// Classify habitat suitability and summarize acreage
    Habitat,
    /// Write the run summary report
    Report,
    /// Run every stage in order
    Run,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    match cli.command {
        Command::Simulate => pipeline::cmd_simulate(&cfg),
        Command::Segment => pipeline::cmd_segment(&cfg),
        Command::Features => pipeline::cmd_features(&cfg),
        Command::CompilePlots => pipeline::cmd_compile_plots(&cfg),
        Command::Train => pipeline::cmd_train(&cfg),
        Command::Predict => pipeline::cmd_predict(&cfg),
        Command::Habitat => pipeline::cmd_habitat(&cfg),
        Command::Report => pipeline::cmd_report(&cfg),
        Command::Run => pipeline::cmd_run(&cfg),
    }
}
