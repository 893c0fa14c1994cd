//! Throughput sweeps for tidygrad: epoch time against batch size in one
//! process, and step time against worker count with a coordinator and
//! worker processes on one host. Results are CSV; `report` reduces them to
//! medians and scaling ratios.

pub mod cli;
pub mod distributed;
pub mod error;
pub mod report;
pub mod sizes;
pub mod standalone;
pub mod stats;

pub use distributed::{bench_distributed, run_point, Binaries, DistributedConfig, DistributedRow};
pub use error::{BenchError, Result};
pub use report::{render, summarize, Summary};
pub use sizes::Sizes;
pub use standalone::{bench_standalone, bench_standalone_observed, StandaloneConfig, StandaloneRow};
