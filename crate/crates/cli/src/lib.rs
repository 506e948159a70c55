//! The `propall` command line: corrupt, train, eval, gradcheck and ablate.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 validation error,
//! 4 oracle-suite failure.

pub mod args;
mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};
pub use manifest::RunManifest;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PROPALL_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("oracle suites failed")]
    OracleFailure,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::OracleFailure => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn invalid(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Parses `argv` (program name first) and runs the command, writing
/// human-readable output to `out`.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv = config::expand_config(argv.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string()));
        }
    };
    match cli.command {
        Command::Corrupt(a) => commands::corrupt(&a, out),
        Command::Train(a) => commands::train(&a, out),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Gradcheck(a) => commands::gradcheck(&a, out),
        Command::Ablate(a) => commands::ablate(&a, out),
    }
}
