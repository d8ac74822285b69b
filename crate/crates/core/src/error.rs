use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} out of range: {value} (limit {limit})")]
    Range {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate channel: zero channel norm")]
    DegenerateChannel,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no visible links over the whole run")]
    EmptyDataset,

    #[error("parse error in {path} at record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },

    #[error("dimension mismatch in {layer}: expected {expected}, got {actual}")]
    Dimension {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("training diverged on client {client} in round {round}: loss {loss}")]
    Divergence { client: usize, round: usize, loss: f64 },

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }
}
