#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::manual_is_multiple_of,
    clippy::type_complexity
)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::RunOptions;
use config::LoadedConfig;

#[derive(Parser)]
#[command(
    name = "scenario",
    version,
    about = "Conditional forecasts and generalized impulse responses for nonlinear VARs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write posterior summaries.
    Estimate(Common),
    /// Conditional or unconditional forecast.
    Forecast(Common),
    /// Generalized impulse responses.
    Girf(Common),
    /// Check the samplers against closed-form linear-Gaussian answers.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every saved draw.
    #[arg(long)]
    dump_draws: bool,
}

impl Flags {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            chains: self.chains,
            out: self.out.clone(),
            dump_draws: self.dump_draws,
        }
    }
}

fn init_threads() -> scenario_core::Result<()> {
    if let Ok(v) = std::env::var("SCENARIO_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            scenario_core::Error::Config(format!(
                "SCENARIO_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| scenario_core::Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> scenario_core::Result<PathBuf> {
    init_threads()?;
    match cli.command {
        Command::Estimate(c) => {
            commands::estimate(&LoadedConfig::read(&c.config)?, &c.flags.options())
        }
        Command::Forecast(c) => {
            commands::forecast(&LoadedConfig::read(&c.config)?, &c.flags.options())
        }
        Command::Girf(c) => commands::girf(&LoadedConfig::read(&c.config)?, &c.flags.options()),
        Command::Verify(v) => {
            let loaded = v.config.as_deref().map(LoadedConfig::read).transpose()?;
            commands::verify(loaded.as_ref(), &v.flags.options())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(out) => {
            log::info!("outputs written to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
