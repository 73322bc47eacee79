mod commands;
mod config;
mod error;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::Context;
use config::RunConfig;
use error::CliError;

/// Environment variable that overrides the output directory of the config file.
const OUT_ENV: &str = "RDKINK_OUT";

#[derive(Parser)]
#[command(name = "rdkink", version, about = "Regression discontinuity and kink estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides RDKINK_OUT and the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed for simulations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Weight fits and bin means by the expansion factors.
    #[arg(long, global = true, value_enum)]
    survey_weights: Option<Toggle>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Convert a survey extract into canonical datasets, one per outcome.
    Ingest,
    /// Run the estimation grid and write results and bandwidth tables.
    Estimate,
    /// Run a Monte Carlo study on a synthetic process.
    Simulate,
    /// Write binned means and fitted curves for plotting.
    Plotdata,
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let config = RunConfig::load(path)?;
    let config_dir = path
        .parent()
        .map(PathBuf::from)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| {
            config.out.as_ref().map(|p| {
                if p.is_absolute() {
                    p.clone()
                } else {
                    config_dir.join(p)
                }
            })
        })
        .unwrap_or_else(|| PathBuf::from("rdkink-out"));
    let survey_weights = match cli.survey_weights {
        Some(Toggle::On) => true,
        Some(Toggle::Off) => false,
        None => config.survey_weights,
    };
    Ok(Context {
        config,
        config_dir,
        out,
        seed: cli.seed,
        survey_weights,
    })
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = context(cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Estimate => commands::estimate(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Plotdata => commands::plotdata(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rdkink: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
