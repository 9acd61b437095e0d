//! `smoothcert` command-line driver.
//!
//! Exit codes: 0 success, 1 computational failure, 2 usage error (bad
//! flags, config keys, missing or malformed input files).

// `!(x > 0.0)` is how argument checks reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use args::Command;
use error::{CliResult, EXIT_USAGE};

fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Train(a) => commands::train(a),
        Command::Sigma(a) => commands::sigma(a),
        Command::Certify(a) => commands::certify(a),
        Command::Bound(a) => commands::bound(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<_> = std::env::args_os().collect();
    let env_seed = std::env::var(config::SEED_ENV).ok();
    let cli = match config::resolve(argv, env_seed) {
        Ok(Ok(cli)) => cli,
        Ok(Err(clap_err)) => {
            let _ = clap_err.print();
            return ExitCode::from(if clap_err.use_stderr() { EXIT_USAGE } else { 0 });
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
