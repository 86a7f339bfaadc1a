mod args;
mod commands;
mod error;
mod files;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// argv for the manifest. `--jobs` is left out: it cannot change any output,
/// and sweeps run with different thread counts must stay byte-identical.
fn command_echo() -> Vec<String> {
    let mut out = vec!["nrsfm".to_string()];
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--jobs" {
            args.next();
        } else if !a.starts_with("--jobs=") {
            out.push(a);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let echo = command_echo();
    let res = match &cli.command {
        Command::Synth(a) => commands::synth(a, &echo),
        Command::Reconstruct(a) => commands::reconstruct(a, &echo),
        Command::Eval(a) => commands::eval(a, &echo),
        Command::Sweep(a) => commands::sweep_cmd(a, &echo),
    };
    match res {
        Ok(()) => ExitCode::from(error::code::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
