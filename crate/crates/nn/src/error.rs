use fusestrata_core::reconmetrics::MetricError;
use fusestrata_core::volio::VolioError;
use fusestrata_core::UnknownStrategy;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel mismatch: expected {expected}, got {found}")]
    Channels { expected: usize, found: usize },
    #[error("\"same\" padding needs an odd kernel, got {0}")]
    EvenKernel(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (first non-finite value in block `{block}`)")]
    NonFiniteLoss { step: usize, block: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    UnknownStrategy(#[from] UnknownStrategy),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Volio(#[from] VolioError),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NnError::Shape(msg.into()))
}
