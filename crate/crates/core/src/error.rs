use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch norm needs at least 2 values per channel in train mode, got {0}")]
    DegenerateVariance(usize),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("clip too short: {samples} samples, need at least {needed}")]
    TooShort { samples: usize, needed: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("ingestion error at {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("{} unreadable audio file(s): {}", .0.len(), list_failures(.0))]
    UnreadableAudio(Vec<(PathBuf, String)>),

    #[error("stratification error: class {class} has {count} utterances, need at least 2")]
    Stratification { class: usize, count: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn list_failures(failures: &[(PathBuf, String)]) -> String {
    let items: Vec<String> = failures.iter().map(|(p, r)| format!("{}: {r}", p.display())).collect();
    items.join("; ")
}
