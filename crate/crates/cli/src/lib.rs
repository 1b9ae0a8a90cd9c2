//! Command-line front end: argument definitions, subcommand handlers and
//! report/manifest emission. The `aerodet` binary is a thin wrapper around
//! [`run`].

pub mod cli;
pub mod commands;
pub mod output;

pub use cli::Cli;
pub use commands::Verdict;

use cli::Command;
use output::Sink;

/// Module and I/O errors.
pub const EXIT_ERROR: u8 = 2;
/// A subcommand's own tolerance check failed.
pub const EXIT_CHECK_FAILED: u8 = 1;

pub fn run(cli: Cli) -> anyhow::Result<Verdict> {
    let sink = Sink {
        dir: cli.out,
        json: cli.json,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Arch(c) => commands::arch(c, &sink),
        Command::Loss(c) => commands::loss(c, &sink),
        Command::Eval(c) => commands::eval(c, &sink),
        Command::Stats(c) => commands::stats(c, &sink),
    }
}
