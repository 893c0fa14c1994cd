use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use tidygrad_dist::cli::{run_coordinator_cli, CoordinatorArgs};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = CoordinatorArgs::parse();
    // The bench driver reads this line to learn the port.
    let announce = |addr| {
        let mut out = std::io::stdout();
        let _ = writeln!(out, "listening on {addr}").and_then(|_| out.flush());
    };
    match run_coordinator_cli(&args, announce) {
        Ok(report) => {
            log::info!("finished {} steps with {} workers", report.metrics.len(), report.workers.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("coordinator: {e}");
            ExitCode::FAILURE
        }
    }
}
