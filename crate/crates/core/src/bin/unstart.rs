use std::process::ExitCode;

use clap::Parser;
use unstart::cli::{configure_workers, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_workers().and_then(|_| run(&cli)) {
        Ok(dir) => {
            if let Some(dir) = dir {
                println!("{}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
