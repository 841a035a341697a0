use std::path::PathBuf;

use diffcore::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("column {column} is constant; cannot normalize")]
    DegenerateColumn { column: String },
    #[error("{path}: {location}: {detail}")]
    Ingest {
        path: PathBuf,
        location: String,
        detail: String,
    },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("kernel matrix is ill-conditioned even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },
    #[error("training diverged at iteration {iteration}: loss is {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("unrecognised file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
