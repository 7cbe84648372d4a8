use std::io::Write;
use std::process::ExitCode;

use bhs_cli::{execute, exit_code, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
