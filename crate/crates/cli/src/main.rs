mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use ssdl_core::SsdlError;

use args::{Cli, Command};

/// One line on stderr: `error kind=<kind> code=<exit code> message=<text>`.
fn report(e: &SsdlError) -> ExitCode {
    let kind = e.kind();
    let message = e.to_string().replace('\n', " ");
    eprintln!("error kind={} code={} message={}", kind.as_str(), kind.exit_code(), message);
    ExitCode::from(kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Pseudolabel(a) => commands::pseudolabel(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
