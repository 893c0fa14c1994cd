//! The `bench` command line.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tidygrad_dist::cli::{CoordinatorArgs, WorkloadArgs};
use tidygrad_dist::{LinkMode, Regime};

use crate::distributed::{bench_distributed, set_batch, write_distributed_csv, Binaries, DistributedConfig};
use crate::error::Result;
use crate::report::{render, render_csv, summarize};
use crate::sizes::Sizes;
use crate::standalone::{bench_standalone, write_standalone_csv, StandaloneConfig};

/// Throughput sweeps for single-process and data-parallel training.
#[derive(Debug, Parser)]
#[command(name = "bench", version)]
pub struct BenchArgs {
    #[command(subcommand)]
    pub command: BenchCommand,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Epoch time against batch size in one process.
    Standalone(StandaloneArgs),
    /// Step time against worker count with local worker processes.
    Distributed(DistributedArgs),
    /// Medians and scaling ratios from earlier CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct StandaloneArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[arg(long, default_value = "4,8,...,512")]
    pub batch_sizes: Sizes,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Repeats of the whole sweep.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistributedArgs {
    #[arg(long, default_value = "1,2,4,8,16")]
    pub workers: Sizes,
    #[arg(long, value_enum)]
    pub regime: Regime,
    /// Global batch under fixed_global, per-worker batch under fixed_local.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub steps: u64,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Link capacity in bits per second.
    #[arg(long)]
    pub bandwidth_cap: Option<f64>,
    #[arg(long, value_enum, default_value_t = LinkMode::Shared)]
    pub link: LinkMode,
    /// One-way delay per frame, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub latency_ms: f64,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Seconds before a sweep point is killed.
    #[arg(long, default_value_t = 600.0)]
    pub point_timeout: f64,
    /// Defaults to the `coordinator` next to this executable.
    #[arg(long)]
    pub coordinator_bin: Option<PathBuf>,
    /// Defaults to the `worker` next to this executable.
    #[arg(long)]
    pub worker_bin: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,
    /// Print the medians as CSV instead of tables.
    #[arg(long)]
    pub plot: bool,
}

impl DistributedArgs {
    pub fn config(&self) -> DistributedConfig {
        let mut coordinator = CoordinatorArgs {
            listen: "127.0.0.1:0".into(),
            regime: self.regime,
            global_batch: None,
            local_batch: None,
            workers: 1,
            steps: self.steps,
            lr: self.lr,
            momentum: self.momentum,
            seed: self.seed,
            bandwidth_cap: self.bandwidth_cap,
            link: self.link,
            latency_ms: self.latency_ms,
            workload: self.workload.clone(),
            csv: None,
        };
        set_batch(&mut coordinator, self.regime, self.batch);
        DistributedConfig {
            coordinator,
            workers: self.workers.0.clone(),
            point_timeout: Duration::from_secs_f64(self.point_timeout.max(0.0)),
        }
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn run(args: BenchArgs) -> Result<()> {
    match args.command {
        BenchCommand::Standalone(a) => {
            let dataset = a.workload.dataset(a.seed)?;
            let cfg = StandaloneConfig {
                model: a.workload.model_config(&dataset),
                batch_sizes: a.batch_sizes.0.clone(),
                epochs: a.epochs,
                lr: a.lr,
                momentum: a.momentum,
                seed: a.seed,
            };
            let mut rows = Vec::new();
            for _ in 0..a.runs {
                rows.extend(bench_standalone(&cfg, &dataset)?);
            }
            write_standalone_csv(&rows, output(&a.csv)?)
        }
        BenchCommand::Distributed(a) => {
            let bins = match (&a.coordinator_bin, &a.worker_bin) {
                (Some(c), Some(w)) => Binaries {
                    coordinator: c.clone(),
                    worker: w.clone(),
                },
                (c, w) => {
                    let near = Binaries::beside_current_exe()?;
                    Binaries {
                        coordinator: c.clone().unwrap_or(near.coordinator),
                        worker: w.clone().unwrap_or(near.worker),
                    }
                }
            };
            let rows = bench_distributed(&a.config(), &bins)?;
            write_distributed_csv(&rows, output(&a.csv)?)
        }
        BenchCommand::Report(a) => {
            let summaries = a.csv.iter().map(summarize).collect::<Result<Vec<_>>>()?;
            let mut out = std::io::stdout().lock();
            if a.plot {
                for s in &summaries {
                    out.write_all(render_csv(s)?.as_bytes())?;
                }
            } else {
                out.write_all(render(&summaries).as_bytes())?;
            }
            Ok(())
        }
    }
}
