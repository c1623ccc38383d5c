use std::process::ExitCode;

use clap::Parser;
use gatedq_cli::{exit, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("gatedq {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
