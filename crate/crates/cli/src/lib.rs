//! Command-line front end: dataset generation, training, evaluation,
//! table sweeps and distillation.

pub mod args;
pub mod commands;
pub mod error;
pub mod output;
pub mod plan;
pub mod sweep;

use clap::Parser;

use args::{Cli, Command};
use error::{EXIT_OK, EXIT_USAGE};

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => commands::gen(a, argv),
        Command::Train(a) => commands::train_cmd(a, argv),
        Command::Eval(a) => commands::eval(a, argv).map(drop),
        Command::Sweep(a) => commands::sweep(a, argv),
        Command::Distill(a) => commands::distill_cmd(a, argv).map(drop),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
