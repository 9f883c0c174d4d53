//! Subcommand front end for the `hypcbm` binary.

pub mod args;
mod commands;
pub mod config;
pub mod error;
mod output;

use args::Cli;
use config::{thread_count, RunConfig};
pub use error::{CliError, Result};
pub use output::MANIFEST_FILE;

/// Resolve settings, size the worker pool and run one subcommand.
pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::from_toml_file(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.command.run_config().clone().over(file.clone());
    let env = std::env::var("HYPCBM_THREADS").ok();
    if let Some(n) = thread_count(cli.command.run_config().threads, env.as_deref(), file.threads)? {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("worker pool already initialised: {e}");
        }
    }
    commands::dispatch(&cli.command, &cfg)
}
