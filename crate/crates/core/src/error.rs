use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("temperature {temperature} °C outside configured range [{min}, {max}]")]
    TemperatureOutOfRange { temperature: f64, min: f64, max: f64 },

    #[error("value {value} is not a member of grid {grid:?}")]
    NotInGrid { value: f64, grid: Vec<f64> },

    #[error("buffer length mismatch: expected {expected} bytes, got {actual}")]
    LineLength { expected: usize, actual: usize },

    #[error("address {address:#x} outside the configured space of {lines} lines")]
    AddressOutOfRange { address: u64, lines: u64 },

    #[error("trace parse error at line {line}, field `{field}`: {reason}")]
    TraceParse {
        line: usize,
        field: &'static str,
        reason: String,
    },

    #[error("trace has {len} operations, exceeding the op cap of {cap}")]
    TraceTooLong { len: usize, cap: usize },

    #[error("grid point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("target `{target}` has zero spread on the training split")]
    DegenerateTarget { target: &'static str },

    #[error("feature width mismatch: expected {expected}, got {actual}")]
    Width { expected: usize, actual: usize },

    #[error("non-finite loss in head `{head}` at epoch {epoch}")]
    NonFiniteLoss { head: &'static str, epoch: usize },

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("invalid action index {index} in dimension {dim}")]
    InvalidAction { dim: usize, index: usize },

    #[error("step called on a finished episode")]
    EpisodeDone,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing prerequisite artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
