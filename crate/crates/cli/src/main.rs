//! `microiqa` command line tool. Each subcommand is one pipeline step and
//! writes a resolved configuration next to its outputs.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
//! Failures print a JSON error object on stderr.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use microiqa::error::ErrorCategory;
use serde_json::json;

use crate::args::{Cli, ResolvedConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(microiqa::Error),
}

impl From<microiqa::Error> for CliError {
    fn from(e: microiqa::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "data",
            _ => "numeric",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    let body = json!({
        "error": { "kind": err.kind(), "code": err.exit_code(), "message": err.message() }
    });
    eprintln!("{body}");
    ExitCode::from(err.exit_code())
}

fn parse() -> Result<ResolvedConfig, CliError> {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            e.exit();
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string().trim().to_string())),
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let resolved = ResolvedConfig { global: cli.global, command: cli.command };
    match resolved.global.config.clone() {
        Some(path) => config::merge(resolved, &matches, &path),
        None => Ok(resolved),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let resolved = match parse() {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Some(n) = resolved.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&CliError::Usage(format!("--threads {n}: {e}")));
        }
    }
    match commands::run(&resolved) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
