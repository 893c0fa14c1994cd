use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("malformed CSV {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("{process} failed: {reason}")]
    Process { process: String, reason: String },
    #[error(transparent)]
    Core(#[from] tidygrad::Error),
    #[error(transparent)]
    Dist(#[from] tidygrad_dist::DistError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
