use std::process::ExitCode;

use clap::Parser;
use tidygrad_dist::cli::{run_worker_cli, WorkerArgs};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run_worker_cli(&WorkerArgs::parse()) {
        Ok(report) => {
            log::info!("worker {} done: {}", report.worker_id, report.shutdown_reason);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("worker: {e}");
            ExitCode::FAILURE
        }
    }
}
