use thiserror::Error;

use crate::codec::DecodeError;
use crate::entropy::EntropyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rate target of {r_max} bits is below the minimum achievable rate of {min_rate} bits")]
    Infeasible { r_max: f64, min_rate: u64 },

    #[error(transparent)]
    Entropy(#[from] EntropyError),

    #[error(transparent)]
    Decode(#[from] DecodeError),

}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
