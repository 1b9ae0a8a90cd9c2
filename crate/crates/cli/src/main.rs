use std::process::ExitCode;

use aerodet_cli::{run, Cli, Verdict, EXIT_CHECK_FAILED, EXIT_ERROR};
use clap::Parser;

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
