use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("feature {0} has zero standard deviation over the statistics rows")]
    DegenerateFeature(usize),
    #[error("dataset has no coordinates; spatial splitting needs lon/lat columns")]
    NoCoordinates,
    #[error("block side must be positive, got {0} km")]
    InvalidBlockSize(f64),
    #[error("invalid split fractions: train {train}, val {val}")]
    InvalidFractions { train: f64, val: f64 },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("dataset contains no valid rows")]
    EmptyDataset,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("data has zero total variance")]
    ZeroVariance,
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("non-finite loss term: {term}")]
    NonFiniteLoss { term: String },
    #[error("training aborted at update {update}: {source}")]
    TrainingAborted {
        update: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite gradient entry in {0}")]
    NonFiniteGradient(String),
    #[error("latent index {index} out of range for {m} latents")]
    IndexError { index: usize, m: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid scan grid: {0}")]
    InvalidGrid(String),
    #[error("rank {0} has fewer than two points on its active branch")]
    NoActiveBranch(usize),
    #[error("no ranks in common between the compared spectra")]
    NothingToCompare,
    #[error("reduced temperature must be positive, got {0}")]
    InvalidTau(f64),
    #[error("signal fraction {0} outside [0, 1)")]
    LogDomainError(f64),
    #[error("nothing to plot: {0}")]
    NothingToPlot(String),
    #[error("training failed at T = {temperature}: {source}")]
    ScanPointFailed {
        temperature: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
