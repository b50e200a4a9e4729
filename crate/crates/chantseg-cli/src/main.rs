//! Batch driver for chant segmentation and mode classification
//! experiments: ingest, train, segment, classify, evaluate, analyze.
//!
//! Exit codes: 0 on success, 1 on user errors (bad flags, missing or
//! malformed files), 2 on internal errors.

mod commands;
mod evaluate;
mod manifest;
mod opts;
mod pipeline;

use anyhow::Result;
use clap::error::ErrorKind;
use clap::Parser;
use opts::{Cli, Command};
use std::fmt;

/// An error caused by the invocation rather than by this program.
#[derive(Debug)]
pub struct UserError(String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user_error(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UserError(message.into()))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn run(mut cli: Cli) -> Result<()> {
    args_mut(&mut cli.command)
        .apply_config_file()
        .map_err(|e| user_error(format!("{e:#}")))?;
    match &cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Train(args) => commands::train(args),
        Command::Segment(args) => commands::segment(args),
        Command::Classify(args) => commands::classify(args),
        Command::Evaluate(args) => evaluate::evaluate(args),
        Command::Analyze(args) => commands::analyze(args),
    }
}

fn args_mut(command: &mut Command) -> &mut opts::CommonArgs {
    match command {
        Command::Ingest(a)
        | Command::Train(a)
        | Command::Segment(a)
        | Command::Classify(a)
        | Command::Evaluate(a)
        | Command::Analyze(a) => a,
    }
}

/// 1 for problems with the invocation or its inputs, 2 for violated
/// internal invariants.
fn exit_code(err: &anyhow::Error) -> i32 {
    use chantseg::Error;
    for cause in err.chain() {
        if cause.downcast_ref::<UserError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::StaleTrace { .. }
                | Error::InvalidSegmentation(_)
                | Error::SegmentTooLong { .. }
                | Error::AllModesImpossible(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}
