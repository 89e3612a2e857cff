use thiserror::Error;

use radchar_nn::NnError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no {kind} code of length {len}")]
    InvalidCodeLength { kind: &'static str, len: usize },
    #[error("invalid signal parameters: {0}")]
    InvalidParams(String),
    #[error("pulse train overflows the frame: last occupied sample {last} >= {len}")]
    FrameOverflow { last: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("degenerate variance {0:e}")]
    DegenerateVariance(f64),
    #[error("label {name}={value} outside [{min}, {max}]")]
    LabelOutOfRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {losses}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        losses: String,
    },
    #[error("checkpoint/dataset mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
