use std::process::ExitCode;

use clap::Parser;
use condorcet::cli::{self, Cli, THREADS_ENV};

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        match value.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("global pool is configured once");
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {value:?}");
                return ExitCode::from(1);
            }
        }
    }
    let mut stdout = std::io::stdout().lock();
    match cli::run(args, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
