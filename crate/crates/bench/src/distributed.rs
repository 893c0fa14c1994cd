//! Distributed throughput against worker count, one coordinator process and
//! K worker processes per sweep point.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tidygrad_dist::cli::CoordinatorArgs;
use tidygrad_dist::{Regime, StepMetrics};

use crate::error::{BenchError, Result};
use crate::stats::median_index;

pub const DISTRIBUTED_HEADER: [&str; 7] = [
    "workers",
    "regime",
    "global_batch",
    "step_wall_s",
    "compute_s",
    "comm_s",
    "samples_per_sec",
];

/// Locations of the `coordinator` and `worker` executables.
#[derive(Debug, Clone)]
pub struct Binaries {
    pub coordinator: PathBuf,
    pub worker: PathBuf,
}

impl Binaries {
    /// Executables installed next to the running one.
    pub fn beside_current_exe() -> Result<Binaries> {
        let exe = std::env::current_exe()?;
        let dir = exe.parent().unwrap_or(Path::new("."));
        Ok(Binaries {
            coordinator: dir.join(format!("coordinator{}", std::env::consts::EXE_SUFFIX)),
            worker: dir.join(format!("worker{}", std::env::consts::EXE_SUFFIX)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DistributedConfig {
    /// Template for every sweep point. `workers`, `listen` and `csv` are
    /// overwritten per point; the batch flag is interpreted by the regime.
    pub coordinator: CoordinatorArgs,
    pub workers: Vec<usize>,
    /// Per-point limit after which every process is killed.
    pub point_timeout: Duration,
}

/// The median step of one sweep point. A failed point keeps its identity
/// columns and leaves the timings empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributedRow {
    pub workers: usize,
    pub regime: String,
    pub global_batch: usize,
    pub step_wall_s: Option<f64>,
    pub compute_s: Option<f64>,
    pub comm_s: Option<f64>,
    pub samples_per_sec: Option<f64>,
}

impl DistributedRow {
    pub fn failed(&self) -> bool {
        self.samples_per_sec.is_none()
    }
}

/// Picks the step with the median wall time and reports its decomposition,
/// so compute and communication always fit inside the reported wall time.
pub fn median_step(metrics: &[StepMetrics]) -> Option<&StepMetrics> {
    let walls: Vec<f64> = metrics.iter().map(|m| m.wall_ms).collect();
    median_index(&walls).map(|i| &metrics[i])
}

/// Kills and reaps every child still running when dropped.
struct Reaper(Vec<(String, Child)>);

impl Reaper {
    fn push(&mut self, name: String, child: Child) -> &mut Child {
        self.0.push((name, child));
        &mut self.0.last_mut().expect("just pushed").1
    }
}

impl Drop for Reaper {
    fn drop(&mut self) {
        for (name, child) in &mut self.0 {
            if let Ok(None) = child.try_wait() {
                log::debug!("killing {name}");
                let _ = child.kill();
            }
            let _ = child.wait();
        }
    }
}

fn process_error(process: &str, reason: impl Into<String>) -> BenchError {
    BenchError::Process {
        process: process.into(),
        reason: reason.into(),
    }
}

/// Runs one sweep point and returns its per-step metrics.
pub fn run_point(args: &CoordinatorArgs, bins: &Binaries, timeout: Duration) -> Result<Vec<StepMetrics>> {
    let dir = tempfile::tempdir()?;
    let csv_path = dir.path().join("steps.csv");
    let mut args = args.clone();
    args.listen = "127.0.0.1:0".into();
    args.csv = Some(csv_path.clone());
    args.plan()?;

    let mut reaper = Reaper(Vec::new());
    let coordinator = reaper.push(
        "coordinator".into(),
        Command::new(&bins.coordinator)
            .args(args.to_args())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| process_error("coordinator", format!("{}: {e}", bins.coordinator.display())))?,
    );
    let stdout = coordinator.stdout.take().expect("stdout is piped");
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line)?;
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| process_error("coordinator", "exited before listening"))?
        .to_string();

    for k in 0..args.workers {
        let name = format!("worker-{k}");
        let child = Command::new(&bins.worker)
            .args(["--connect", &addr, "--name", &name])
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| process_error(&name, format!("{}: {e}", bins.worker.display())))?;
        reaper.push(name, child);
    }

    let deadline = Instant::now() + timeout;
    loop {
        let (name, coord) = &mut reaper.0[0];
        if let Some(status) = coord.try_wait()? {
            if !status.success() {
                return Err(process_error(name, status.to_string()));
            }
            break;
        }
        for (name, child) in &mut reaper.0[1..] {
            if let Some(status) = child.try_wait()? {
                if !status.success() {
                    return Err(process_error(name, status.to_string()));
                }
            }
        }
        if Instant::now() > deadline {
            return Err(process_error("sweep point", format!("timed out after {timeout:?}")));
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    for (name, child) in &mut reaper.0[1..] {
        let status = child.wait()?;
        if !status.success() {
            return Err(process_error(name, status.to_string()));
        }
    }

    let mut reader = csv::Reader::from_path(&csv_path)?;
    let metrics = reader.deserialize().collect::<Result<Vec<StepMetrics>, _>>()?;
    Ok(metrics)
}

/// Sweeps the worker counts in order. A point that fails is logged and
/// recorded without timings; the sweep continues.
pub fn bench_distributed(cfg: &DistributedConfig, bins: &Binaries) -> Result<Vec<DistributedRow>> {
    if cfg.workers.is_empty() || cfg.workers.contains(&0) {
        return Err(BenchError::Config("worker counts must be positive".into()));
    }
    let mut rows = Vec::new();
    for &k in &cfg.workers {
        let mut args = cfg.coordinator.clone();
        args.workers = k;
        let plan = args.plan()?;
        let mut row = DistributedRow {
            workers: k,
            regime: plan.regime.as_str().into(),
            global_batch: plan.global_batch(),
            step_wall_s: None,
            compute_s: None,
            comm_s: None,
            samples_per_sec: None,
        };
        match run_point(&args, bins, cfg.point_timeout) {
            Ok(metrics) => match median_step(&metrics) {
                Some(m) => {
                    row.step_wall_s = Some(m.wall_ms / 1e3);
                    row.compute_s = Some(m.compute_ms / 1e3);
                    row.comm_s = Some(m.comm_ms / 1e3);
                    row.samples_per_sec = Some(m.samples as f64 / (m.wall_ms / 1e3));
                    log::info!("K={k}: {:.1} samples/s", m.samples_per_sec);
                }
                None => log::warn!("K={k}: no steps recorded"),
            },
            Err(e) => log::warn!("K={k} failed: {e}"),
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_distributed_csv(rows: &[DistributedRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(DISTRIBUTED_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Batch flags for `regime` with `batch` samples.
pub fn set_batch(args: &mut CoordinatorArgs, regime: Regime, batch: usize) {
    args.regime = regime;
    (args.global_batch, args.local_batch) = match regime {
        Regime::FixedGlobal => (Some(batch), None),
        Regime::FixedLocal => (None, Some(batch)),
    };
}
