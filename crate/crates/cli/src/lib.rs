//! `fprune` command-line harness.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod patterns;
pub mod pipeline;

use std::ffi::OsString;

use clap::Parser;

/// Validation failure (bad flag, config or missing input). Maps to exit
/// code 1; every other error maps to 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn is_validation(err: &anyhow::Error) -> bool {
    use fprune_core::Error as E;
    if err.downcast_ref::<Invalid>().is_some() {
        return true;
    }
    matches!(
        err.downcast_ref::<E>(),
        Some(
            E::Config(_)
                | E::UnknownArchitecture(_)
                | E::UnknownLayer(_)
                | E::Plan(_)
                | E::NotPrunable(_)
                | E::TraceTargetPruned { .. }
        )
    )
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_validation(&e) {
                EXIT_INVALID
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
