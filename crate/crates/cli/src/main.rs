use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = evtrack_cli::Cli::parse();
    match evtrack_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
