use clap::Parser;
use geopg_cli::cli::{dispatch, Cli};
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geopg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
