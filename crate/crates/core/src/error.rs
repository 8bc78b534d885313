use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid data spec: {0}")]
    Data(String),
    #[error("shape mismatch: expected {expected} parameters, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("empty batch or dataset")]
    EmptyData,
    #[error("invalid participation request: {0}")]
    Participation(String),
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("invalid latency input: {0}")]
    Latency(String),
    #[error("invalid theory input: {0}")]
    Theory(String),
    #[error("learning-rate condition violated: {0}")]
    UnsafeLearningRate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
