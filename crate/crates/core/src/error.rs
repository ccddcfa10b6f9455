use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("series too short: length {len} < conditioning {context} + prediction {prediction}")]
    SeriesTooShort {
        len: usize,
        context: usize,
        prediction: usize,
    },
    #[error("lengths not divisible by K: T={context}, N={prediction}, K={k}")]
    NotDivisible {
        context: usize,
        prediction: usize,
        k: usize,
    },
    #[error("ragged sub-series: expected length {expected}, sub-series {index} has {found}")]
    RaggedSubSeries {
        expected: usize,
        index: usize,
        found: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("model format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
