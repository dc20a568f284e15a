use thiserror::Error;

/// Errors raised by the receiver, channel and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty block: length must be positive")]
    EmptyBlock,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("negative variance {0}")]
    NegativeVariance(f64),
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("unknown constellation `{0}`")]
    UnknownConstellation(String),
    #[error("unknown channel preset `{0}`")]
    UnknownPreset(String),
    #[error("channel spread {taps} exceeds block length {block}")]
    ChannelTooLong { taps: usize, block: usize },
    #[error("pilot count {pilots} is smaller than channel spread {taps}")]
    TooFewPilots { pilots: usize, taps: usize },
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("singular covariance at frequency bin {0}")]
    SingularBin(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{0}")]
    Analysis(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
