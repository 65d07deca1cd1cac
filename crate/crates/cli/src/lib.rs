//! The `schemind` command line: batch runs, single stages, the baseline,
//! and the HTTP server.

use std::ffi::OsString;

use clap::Parser;

pub mod args;
mod commands;
pub mod error;
mod report;
pub mod stages;
pub mod workspace;

use args::{Cli, Command};
use error::{EXIT_OK, EXIT_USAGE};

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .try_init();
    let result = match &cli.command {
        Command::Run(a) => commands::run(a),
        Command::Stage(a) => commands::stage(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
