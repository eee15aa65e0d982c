//! Driver for the `lyapcert` command line: configuration, the four command
//! pipelines and their reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use config::{Command, RunConfig};
pub use error::{CliError, CliResult};
pub use report::{Report, Verdict};

use report::ErrorInfo;

/// Run a command and write `report.json` (plus CSVs) to `config.out`.
///
/// Errors only when the output directory is unusable; every other failure
/// is recorded in the returned report.
pub fn execute(config: &RunConfig) -> CliResult<Report> {
    config.validate()?;
    config.prepare_out()?;
    let run = || -> (Option<report::SystemInfo>, CliResult<commands::Outcome>) {
        match commands::load(config) {
            Ok(loaded) => (Some(loaded.info(&config.system)), commands::run(config, &loaded)),
            Err(e) => (None, Err(e)),
        }
    };
    let (system, outcome) = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut report = Report::new(config);
    report.system = system;
    match outcome {
        Ok(o) => {
            report.verdict = o.verdict;
            report.result = o.result;
            report.error = o.error;
        }
        Err(e) => {
            report.verdict = ErrorInfo::verdict_for(&e);
            report.error = Some(ErrorInfo::from_cli(&e));
        }
    }
    report.write(&config.out)?;
    Ok(report)
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let config = cli.into_config();
    match execute(&config) {
        Ok(report) => {
            println!(
                "{}: {} ({})",
                report.command,
                verdict_name(report.verdict),
                config.out.join("report.json").display()
            );
            if let Some(err) = &report.error {
                eprintln!("{}: {}", err.kind, err.message);
            }
            report.verdict.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            Verdict::Error.exit_code()
        }
    }
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Falsified => "falsified",
        Verdict::Error => "error",
    }
}
