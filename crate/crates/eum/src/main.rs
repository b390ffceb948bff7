use std::process::ExitCode;

use clap::Parser;
use eum::cli::{self, Cli};

fn main() -> ExitCode {
    match cli::run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eum: {e}");
            ExitCode::FAILURE
        }
    }
}
