//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage, validation or configuration
//! errors, 2 on I/O errors (unreadable, corrupt or incompatible files).

mod args;
mod commands;
mod manifest;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;
pub use manifest::RunManifest;

use crate::error::Error;

pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help and version go to stdout, errors to stderr.
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ncp: {e}");
            exit_code(&e)
        }
    }
}
