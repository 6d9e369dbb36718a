use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("degenerate splice: source and donor seeds are both {0}")]
    DegenerateSplice(u64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite loss at step {step}: term `{term}` = {value}")]
    NonFinite {
        step: u64,
        term: String,
        value: f64,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
