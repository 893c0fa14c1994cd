//! Single-process throughput against batch size.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tidygrad::data::{BatchIterator, Dataset};
use tidygrad::nn::{build_model, train_step, Layer, ModelConfig, MomentumSgd};
use tidygrad::tidy;

use crate::error::{BenchError, Result};

pub const STANDALONE_HEADER: [&str; 3] = ["batch_size", "epoch_wall_s", "samples_per_sec"];

#[derive(Debug, Clone)]
pub struct StandaloneConfig {
    pub model: ModelConfig,
    /// Ascending.
    pub batch_sizes: Vec<usize>,
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub seed: u64,
}

/// One timed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandaloneRow {
    pub batch_size: usize,
    pub epoch_wall_s: f64,
    pub samples_per_sec: f64,
}

impl StandaloneConfig {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.batch_sizes.is_empty() || self.batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Config("batch sizes must be strictly ascending".into()));
        }
        if let Some(&b) = self.batch_sizes.iter().find(|&&b| b == 0 || b > dataset.len()) {
            return Err(BenchError::Config(format!(
                "batch size {b} does not fit {} samples",
                dataset.len()
            )));
        }
        self.model.validate()?;
        Ok(())
    }
}

/// Trains a fresh model per batch size and times every epoch from its first
/// batch to its last optimizer step. Samples per second counts the samples
/// actually trained on, which excludes the dropped tail.
pub fn bench_standalone(cfg: &StandaloneConfig, dataset: &Dataset) -> Result<Vec<StandaloneRow>> {
    bench_standalone_observed(cfg, dataset, |_, _| {})
}

/// As [`bench_standalone`], also handing every step's batch size and loss to
/// `on_loss`. The callback runs inside the timed region.
pub fn bench_standalone_observed(
    cfg: &StandaloneConfig,
    dataset: &Dataset,
    mut on_loss: impl FnMut(usize, f32),
) -> Result<Vec<StandaloneRow>> {
    cfg.validate(dataset)?;
    let mut rows = Vec::new();
    for &batch in &cfg.batch_sizes {
        let model = build_model(&cfg.model)?;
        let optimizer = MomentumSgd::new(model.parameters(), cfg.lr, cfg.momentum)?;
        let mut batches = BatchIterator::new(dataset, batch, cfg.seed)?;
        for _ in 0..cfg.epochs {
            let start = Instant::now();
            let mut samples = 0;
            tidy(|| -> Result<()> {
                while let Some((images, labels)) = batches.next_batch()? {
                    on_loss(batch, tidy(|| train_step(&model, &optimizer, &images, &labels))?);
                    samples += batch;
                }
                Ok(())
            })?;
            let wall = start.elapsed().as_secs_f64();
            log::info!("batch {batch}: {samples} samples in {wall:.3} s");
            rows.push(StandaloneRow {
                batch_size: batch,
                epoch_wall_s: wall,
                samples_per_sec: samples as f64 / wall,
            });
        }
    }
    Ok(rows)
}

/// Writes the header even when there are no rows.
pub fn write_standalone_csv(rows: &[StandaloneRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(STANDALONE_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
