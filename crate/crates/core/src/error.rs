use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("noise model error: {0}")]
    Noise(String),

    #[error("invalid trainer configuration: {0}")]
    TrainerConfig(String),

    #[error("loss undefined on an empty dataset")]
    EmptyDataset,

    #[error("training diverged at global step {step} (loss = {loss})")]
    Divergence { step: u64, loss: f64 },

    #[error("noise estimation error: {0}")]
    Estimation(String),

    #[error("exchange allocation error: {0}")]
    Allocation(String),

    #[error("degenerate aggregate: {0}")]
    DegenerateAggregate(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("report error: {0}")]
    Report(String),

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    Exists(PathBuf),

    #[error("round {round}, participant {participant}: {source}")]
    Participant {
        round: usize,
        participant: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_participant(self, round: usize, participant: usize) -> Self {
        Error::Participant {
            round,
            participant,
            source: Box::new(self),
        }
    }
}
