//! Medians and scaling ratios from bench CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::distributed::{DistributedRow, DISTRIBUTED_HEADER};
use crate::error::{BenchError, Result};
use crate::standalone::{StandaloneRow, STANDALONE_HEADER};
use crate::stats::median;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub batch_size: usize,
    pub runs: usize,
    pub epoch_wall_s: f64,
    pub samples_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub workers: usize,
    pub global_batch: usize,
    pub runs: usize,
    pub failed: usize,
    /// Medians over the successful runs; `None` if every run failed.
    pub step_wall_s: Option<f64>,
    pub compute_s: Option<f64>,
    pub comm_s: Option<f64>,
    pub samples_per_sec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSummary {
    pub regime: String,
    /// Ascending worker count.
    pub points: Vec<PointSummary>,
}

impl RegimeSummary {
    /// Throughput at the largest worker count over the smallest, counting
    /// only points with data.
    pub fn scaling(&self) -> Option<(usize, usize, f64)> {
        let ok: Vec<_> = self.points.iter().filter_map(|p| Some((p.workers, p.samples_per_sec?))).collect();
        match (ok.first(), ok.last()) {
            (Some(&(k0, s0)), Some(&(k1, s1))) if k1 > k0 => Some((k0, k1, s1 / s0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    NoData { path: PathBuf },
    Standalone { path: PathBuf, batches: Vec<BatchSummary> },
    /// Regimes in order of first appearance.
    Distributed { path: PathBuf, regimes: Vec<RegimeSummary> },
}

fn malformed(path: &Path, reason: impl std::fmt::Display) -> BenchError {
    BenchError::MalformedCsv {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn rows<T: serde::de::DeserializeOwned>(path: &Path, reader: &mut csv::Reader<&[u8]>) -> Result<Vec<T>> {
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| malformed(path, format!("row {}: {e}", i + 1))))
        .collect()
}

/// Summarizes one CSV given its contents.
pub fn summarize_str(path: &Path, text: &str) -> Result<Summary> {
    if text.trim().is_empty() {
        return Ok(Summary::NoData { path: path.into() });
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let summary = if header == STANDALONE_HEADER {
        let rows: Vec<StandaloneRow> = rows(path, &mut reader)?;
        let mut sizes: Vec<usize> = rows.iter().map(|r| r.batch_size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let batches = sizes
            .into_iter()
            .map(|b| {
                let group: Vec<&StandaloneRow> = rows.iter().filter(|r| r.batch_size == b).collect();
                let col = |f: fn(&StandaloneRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
                BatchSummary {
                    batch_size: b,
                    runs: group.len(),
                    epoch_wall_s: col(|r| r.epoch_wall_s).expect("group is non-empty"),
                    samples_per_sec: col(|r| r.samples_per_sec).expect("group is non-empty"),
                }
            })
            .collect::<Vec<_>>();
        if batches.is_empty() {
            return Ok(Summary::NoData { path: path.into() });
        }
        Summary::Standalone {
            path: path.into(),
            batches,
        }
    } else if header == DISTRIBUTED_HEADER {
        let rows: Vec<DistributedRow> = rows(path, &mut reader)?;
        let mut regimes: Vec<String> = Vec::new();
        for r in &rows {
            if !regimes.contains(&r.regime) {
                regimes.push(r.regime.clone());
            }
        }
        if regimes.is_empty() {
            return Ok(Summary::NoData { path: path.into() });
        }
        let regimes = regimes
            .into_iter()
            .map(|regime| {
                let in_regime: Vec<&DistributedRow> = rows.iter().filter(|r| r.regime == regime).collect();
                let mut ks: Vec<usize> = in_regime.iter().map(|r| r.workers).collect();
                ks.sort_unstable();
                ks.dedup();
                let points = ks
                    .into_iter()
                    .map(|k| {
                        let group: Vec<&&DistributedRow> = in_regime.iter().filter(|r| r.workers == k).collect();
                        let ok: Vec<&&&DistributedRow> = group.iter().filter(|r| !r.failed()).collect();
                        let col = |f: fn(&DistributedRow) -> Option<f64>| {
                            median(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
                        };
                        PointSummary {
                            workers: k,
                            global_batch: group[0].global_batch,
                            runs: group.len(),
                            failed: group.len() - ok.len(),
                            step_wall_s: col(|r| r.step_wall_s),
                            compute_s: col(|r| r.compute_s),
                            comm_s: col(|r| r.comm_s),
                            samples_per_sec: col(|r| r.samples_per_sec),
                        }
                    })
                    .collect();
                RegimeSummary { regime, points }
            })
            .collect();
        Summary::Distributed {
            path: path.into(),
            regimes,
        }
    } else {
        return Err(malformed(path, format!("unknown header {:?}", header.join(","))));
    };
    Ok(summary)
}

pub fn summarize(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| malformed(path, e))?;
    summarize_str(path, text)
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.prec$}"))
}

/// Human-readable tables, one block per summary.
pub fn render(summaries: &[Summary]) -> String {
    let mut out = String::new();
    for s in summaries {
        match s {
            Summary::NoData { path } => {
                let _ = writeln!(out, "{}: no data", path.display());
            }
            Summary::Standalone { path, batches } => {
                let _ = writeln!(out, "{}: standalone, medians per batch size", path.display());
                let _ = writeln!(out, "{:>10} {:>5} {:>13} {:>16}", "batch_size", "runs", "epoch_wall_s", "samples_per_sec");
                for b in batches {
                    let _ = writeln!(
                        out,
                        "{:>10} {:>5} {:>13.4} {:>16.1}",
                        b.batch_size, b.runs, b.epoch_wall_s, b.samples_per_sec
                    );
                }
            }
            Summary::Distributed { path, regimes } => {
                for r in regimes {
                    let _ = writeln!(out, "{}: {}, medians per worker count", path.display(), r.regime);
                    let _ = writeln!(
                        out,
                        "{:>7} {:>12} {:>5} {:>6} {:>11} {:>9} {:>8} {:>16}",
                        "workers", "global_batch", "runs", "failed", "step_wall_s", "compute_s", "comm_s", "samples_per_sec"
                    );
                    for p in &r.points {
                        let _ = writeln!(
                            out,
                            "{:>7} {:>12} {:>5} {:>6} {:>11} {:>9} {:>8} {:>16}",
                            p.workers,
                            p.global_batch,
                            p.runs,
                            p.failed,
                            opt(p.step_wall_s, 4),
                            opt(p.compute_s, 4),
                            opt(p.comm_s, 4),
                            opt(p.samples_per_sec, 1)
                        );
                    }
                    if let Some((k0, k1, ratio)) = r.scaling() {
                        let _ = writeln!(out, "scaling K={k1} / K={k0}: {ratio:.2}x");
                    }
                }
            }
        }
    }
    out
}

/// The medians in the input schema, ready for plotting. `NoData` yields an
/// empty string.
pub fn render_csv(summary: &Summary) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    match summary {
        Summary::NoData { .. } => return Ok(String::new()),
        Summary::Standalone { batches, .. } => {
            w.write_record(STANDALONE_HEADER)?;
            for b in batches {
                w.serialize(StandaloneRow {
                    batch_size: b.batch_size,
                    epoch_wall_s: b.epoch_wall_s,
                    samples_per_sec: b.samples_per_sec,
                })?;
            }
        }
        Summary::Distributed { regimes, .. } => {
            w.write_record(DISTRIBUTED_HEADER)?;
            for r in regimes {
                for p in &r.points {
                    w.serialize(DistributedRow {
                        workers: p.workers,
                        regime: r.regime.clone(),
                        global_batch: p.global_batch,
                        step_wall_s: p.step_wall_s,
                        compute_s: p.compute_s,
                        comm_s: p.comm_s,
                        samples_per_sec: p.samples_per_sec,
                    })?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
