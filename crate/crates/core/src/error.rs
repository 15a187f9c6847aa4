use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain an operation accepts (rates, labels, counts).
    #[error("input domain: {0}")]
    InputDomain(String),

    /// Inconsistent shapes or invalid hyperparameters.
    #[error("configuration: {0}")]
    Config(String),

    /// Malformed IDX payload.
    #[error("format: {message} (at byte offset {offset})")]
    Format { offset: usize, message: String },

    /// Image and label files disagree in length.
    #[error("pairing: {images} images but {labels} labels")]
    Pairing { images: usize, labels: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("missing data file {}", .0.display())]
    MissingData(PathBuf),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-parseable tag used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InputDomain(_) => "input-domain",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Pairing { .. } => "pairing",
            Error::Checkpoint(_) => "checkpoint",
            Error::UndefinedSimilarity(_) => "undefined-similarity",
            Error::MissingData(_) => "missing-data",
            Error::Io(_) => "io",
            Error::Csv(_) => "io",
        }
    }
}
