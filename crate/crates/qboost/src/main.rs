use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = qboost::cli::Cli::parse();
    qboost::cli::init_logging(cli.log_level);
    match qboost::cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
