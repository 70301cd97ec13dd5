use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match cdl::cli::run(cdl::cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
