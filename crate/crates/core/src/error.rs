use alloc::string::String;

/// Errors raised anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: input outside the function domain")]
    Domain { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got {len} elements")]
    NotScalar { len: usize },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimization diverged at step {step}: true loss {loss} exceeds 10x initial {initial}")]
    Diverged { step: u64, loss: f64, initial: f64 },
    #[error("symbol {symbol} outside model support [{min}, {max}]")]
    OutOfSupport { symbol: i32, min: i32, max: i32 },
    #[error("truncated or corrupt payload: {0}")]
    Corrupt(String),
    #[error("bitstream was produced by model {found:016x}, loaded model is {expected:016x}")]
    ModelMismatch { expected: u64, found: u64 },
    #[error("bits-back protocol failure: {0}")]
    Protocol(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
