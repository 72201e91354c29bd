//! Command-line front end: `split`, `train`, `eval`, `fuse` and `batch-audit`.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage or input
//! validation errors.

pub mod args;
mod commands;
pub mod config;

use std::ffi::OsString;

use clap::Parser;
use ppi_affinity::ingest::IngestError;
use ppi_affinity::metrics::MetricError;
use ppi_affinity::regressor::RegressorError;
use ppi_affinity::splitter::SplitError;
use thiserror::Error;

pub use commands::EvalDoc;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::Io { .. } | SplitError::Cache { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<RegressorError> for CliError {
    fn from(e: RegressorError) -> Self {
        match e {
            RegressorError::InvalidConfig(_)
            | RegressorError::Alignment { .. }
            | RegressorError::MissingTable(_)
            | RegressorError::UnknownId(_)
            | RegressorError::Shape(_)
            | RegressorError::Format(_)
            | RegressorError::Loss(_)
            | RegressorError::Sampler(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn init_logging() {
    let env = env_logger::Env::default().default_filter_or("warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Split(c) => commands::split(c),
        Command::Train(c) => commands::train_cmd(c),
        Command::Eval(c) => commands::eval(c),
        Command::Fuse(c) => commands::fuse(c),
        Command::BatchAudit(c) => commands::batch_audit(c),
    }
}

/// Parse `args` (program name first), run the subcommand and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    init_logging();
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match config::merge_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    log::debug!("running {}", cli.command.name());
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
