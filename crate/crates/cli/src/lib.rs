//! Batch front end for `pafmsm`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod args;
mod commands;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;
use pafmsm::{DataError, EstimationError};

pub use args::Cli;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(DataError),
    Numerical(EstimationError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(e) => write!(f, "data: {e}"),
            CliError::Numerical(e) => write!(f, "numerical: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(DataError::Io(e))
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::Data(d) => CliError::Data(d),
            EstimationError::Invalid(m) => CliError::Usage(m),
            EstimationError::HazardSpec(_) => CliError::Data(DataError::Invalid(e.to_string())),
            other => CliError::Numerical(other),
        }
    }
}

/// Caps the rayon pool at `PAF_MSM_THREADS` workers when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("PAF_MSM_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("PAF_MSM_THREADS must be a positive integer (got {value:?})")))?;
    // A pool already built by an earlier call in the same process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|()| commands::dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
