use thiserror::Error;

/// Errors produced by dataset ingestion, clustering steps, and the emulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error at row {row}: {msg}")]
    CsvParse { row: usize, msg: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cluster {cluster} induced by the initial centers is empty")]
    EmptyCluster { cluster: usize },

    #[error("weighted sampling needs at least one row with nonzero norm")]
    ZeroNormData,

    #[error("sampled index {index} has zero probability but nonzero coefficient")]
    ZeroProbabilitySample { index: usize },

    #[error("probabilities sum to {sum}, expected 1 within {tol}")]
    ProbabilityNormalization { sum: f64, tol: f64 },

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("unknown algorithm tag '{0}'")]
    UnknownAlgorithm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
