use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tail mass above {threshold} is {survival:e}, below the sampling floor")]
    TailMassExhausted { threshold: f64, survival: f64 },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("aggregation needs at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("episode {0} carries no generating demand model")]
    MissingTrueModel(usize),
    #[error("enumeration of {0} completions exceeds the guard")]
    EnumerationTooLarge(u128),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}
pub(crate) use invalid;
