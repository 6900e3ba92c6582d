//! Command-line front end: `simulate`, `fit`, `metrics`, `summarize` and
//! `replicate`, each driven by a flat key-value configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] tobitmix::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tobitmix", version, about = "Bayesian finite mixtures of Tobit models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set components=2`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a data set from a built-in DGP.
    Simulate(ConfigArgs),
    /// Run the Gibbs sampler and write a draw store.
    Fit(ConfigArgs),
    /// Compare fit criteria across draw stores.
    Metrics(ConfigArgs),
    /// Posterior summaries of a draw store.
    Summarize(ConfigArgs),
    /// Replication study over DGPs and component counts.
    Replicate(ConfigArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Simulate(a) | Command::Fit(a) | Command::Metrics(a) | Command::Summarize(a) | Command::Replicate(a)) =
        &cli.command;
    let cfg = RunConfig::load(a.config.as_deref(), &a.set)?;
    match cli.command {
        Command::Simulate(_) => commands::cmd_simulate(&cfg),
        Command::Fit(_) => commands::cmd_fit(&cfg).map(drop),
        Command::Metrics(_) => commands::cmd_metrics(&cfg).map(drop),
        Command::Summarize(_) => commands::cmd_summarize(&cfg).map(drop),
        Command::Replicate(_) => commands::cmd_replicate(&cfg).map(drop),
    }
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
