use std::process::ExitCode;

use clap::Parser;
use mfsg_cli::{configure_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(&cli));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.report);
            println!("manifest: {}", outcome.manifest.display());
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed checks: {}", outcome.failures.join("; "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
