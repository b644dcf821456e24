//! The `gta` command: batch analysis, threshold sweeps, scenario
//! generation, trace conversion and the review service.

pub mod args;
pub mod commands;
pub mod config;
pub mod guide;

use std::ffi::OsString;
use std::io::{BufRead, Write};

use clap::Parser;

use args::{Cli, Command};
use config::Settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<gta_core::Error> for CliError {
    fn from(e: gta_core::Error) -> Self {
        CliError::Data(e.into())
    }
}

impl From<gta_core::error::IngestError> for CliError {
    fn from(e: gta_core::error::IngestError) -> Self {
        CliError::Data(e.into())
    }
}

impl From<gta_review::ReviewError> for CliError {
    fn from(e: gta_review::ReviewError) -> Self {
        CliError::Data(e.into())
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T, R, W, E>(args: I, input: &mut R, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    R: BufRead,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, input, out, err) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_DATA,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_DATA
        }
    }
}

fn dispatch<R: BufRead, W: Write, E: Write>(cmd: Command, input: &mut R, out: &mut W, err: &mut E) -> Result<bool, CliError> {
    match cmd {
        Command::Analyze(a) => commands::run_analyze(&a, &Settings::resolve(&a.opts)?, out, err),
        Command::Sweep(a) => commands::run_sweep(&a, &Settings::resolve(&a.opts)?, out, err),
        Command::Serve(a) => commands::run_serve(&a, &Settings::resolve(&a.opts)?, out, err),
        Command::Gen(a) => commands::run_gen(&a, out),
        Command::Ingest(a) => commands::run_ingest(&a, out, err),
        Command::Guide(a) => {
            let settings = Settings::resolve(&a.opts)?;
            let Some(plan) = guide::ask_plan(&a.opts, input, out)? else {
                return Err(CliError::Usage("guide aborted".into()));
            };
            writeln!(out, "running: {}", guide::command_line(&plan))?;
            match plan {
                guide::Plan::Analyze(a) => commands::run_analyze(&a, &settings, out, err),
                guide::Plan::Sweep(a) => commands::run_sweep(&a, &settings, out, err),
            }
        }
    }
}
