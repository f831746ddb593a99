mod args;
mod backend;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::EXIT_USAGE;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Segment(a) => commands::segment(a),
        Command::Generate(a) => commands::generate(a),
        Command::Edit(a) => commands::edit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Run(a) => commands::run(a),
        Command::MockBackend(a) => commands::mock_backend(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
