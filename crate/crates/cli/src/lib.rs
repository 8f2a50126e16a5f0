//! `optrule` command-line front end. [`main_with_args`] is the whole program;
//! the binary only forwards `std::env::args` and the exit code.

pub mod args;
mod commands;
pub mod report;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

pub use args::Cli;
pub use commands::{regret_on_truth, run, RegretSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] optrule::Error),
    #[error("{0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        use optrule::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Json(_) => "json",
            CliError::Core(e) => match e {
                E::Parse { .. } => "parse",
                E::InvalidRecord { .. } | E::Validation(_) => "validation",
                E::Precondition(_) => "precondition",
                E::Unattainable { .. } => "unattainable",
                E::Numerical(_) => "numerical",
                E::Io(_) => "io",
                E::Csv(_) => "csv",
            },
        }
    }

    /// Single-line JSON error record.
    pub fn record(&self) -> String {
        serde_json::json!({"error": {"kind": self.kind(), "message": self.to_string()}}).to_string()
    }
}

fn apply_thread_cap() -> Result<(), CliError> {
    let Some(raw) = std::env::var_os("OPTRULE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("OPTRULE_THREADS must be a positive integer, got {raw:?}")))?;
    // A second call in the same process (tests) finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parse `args` (program name first), run, and return the process exit code.
/// Errors go to stderr as one JSON line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).record());
            return 1;
        }
    };
    match apply_thread_cap().and_then(|()| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            1
        }
    }
}
