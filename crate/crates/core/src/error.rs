use thiserror::Error;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset is corrupt: {malformed} of {total} lines malformed")]
    CorruptDataset { malformed: usize, total: usize },
    #[error("trajectory too short: {len} steps, need at least 3")]
    TrajectoryTooShort { len: usize },
    #[error("unknown POI id {0}")]
    UnknownPoi(u32),
    #[error("no candidate POI available")]
    NoCandidate,
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("k = {k} out of range 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("index {index} out of range for length {len}")]
    BadIndex { index: usize, len: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty set")]
    EmptySet,
    #[error("need at least {need} users, have {have}")]
    NotEnoughUsers { have: usize, need: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
