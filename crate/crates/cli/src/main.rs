//! `dvp`: train, synthesize, measure and run the toy experiment.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Synth(a) => commands::synth(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Toy(a) => commands::toy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dvp: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
