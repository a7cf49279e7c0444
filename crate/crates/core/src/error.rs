use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("reference parameter vector has zero norm")]
    DegenerateReference,

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: line {line}: {message}")]
    Load {
        path: String,
        line: u64,
        message: String,
    },

    #[error("round {round} aborted: participant {participant} failed {failures} times (max retries {max_retries})")]
    RoundAbort {
        round: usize,
        participant: usize,
        failures: usize,
        max_retries: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn ensure_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
