//! Command-line companion to `nonlocal-core`: file formats, seeded data
//! generation, and the `nonlocal` binary's subcommands.
//!
//! The core crate stays allocation-only; everything that needs the
//! filesystem, process exit codes, or serialized artifacts lives here.
//! Each subcommand writes its fully resolved configuration next to its
//! outputs so runs are reproducible from the artifacts alone, and all
//! randomness flows from a single `--seed` through named stream splits.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub mod analytic;
pub mod commands;
pub mod formats;
pub mod opts;
pub mod rng;

/// Process-level failure modes, one per documented exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed config, unreadable input: exit 2.
    Usage(String),
    /// A requested `--assert` check failed: exit 1.
    Assertion(String),
    /// The computation itself broke down (singular system, divergence,
    /// non-finite data): exit 3.
    Numerical(String),
}

impl CliError {
    /// Exit code for the process: 1 assertion, 2 usage, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Assertion(msg) => write!(f, "assertion failed: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Parses the arguments, runs the selected subcommand, and returns the
/// process exit code (0 success, 1 assertion, 2 usage, 3 numerical).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match opts::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests arrive as "errors" but exit clean.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
