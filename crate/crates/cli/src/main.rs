//! `former`: synth / train / eval / predict / profile / gradcheck.
//!
//! Exit codes: 0 success, 1 configuration or usage problem, 2 data problem.
//! Every run emits one manifest: `<out>/manifest.json` when `--out` is given,
//! otherwise a single `manifest: {...}` line on stdout.

mod commands;
mod manifest;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
