use thiserror::Error;

use crate::fixedpoint::FixedError;
use crate::lut::LutError;
use crate::pimsim::SimError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Fixed(#[from] FixedError),
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("core {core}: {source}")]
    Core { core: usize, source: Box<Error> },
    #[error("partition for core {core} needs {needed} bytes but a bank holds {available}")]
    Capacity {
        core: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Capacity,
    Overflow,
    Data,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Fixed(FixedError::AccumulatorOverflow | FixedError::Saturated(_)) => ErrorKind::Overflow,
            Error::Fixed(FixedError::InvalidFormat(_)) => ErrorKind::Config,
            Error::Fixed(_) => ErrorKind::Data,
            Error::Lut(LutError::Fixed(FixedError::NotANumber) | LutError::NonFinite(_)) => ErrorKind::Data,
            Error::Lut(_) => ErrorKind::Config,
            Error::Sim(SimError::InvalidConfig(_) | SimError::UnknownOpClass(_)) => ErrorKind::Config,
            Error::Sim(_) => ErrorKind::Capacity,
            Error::Core { source, .. } => source.kind(),
            Error::Capacity { .. } => ErrorKind::Capacity,
            Error::Param(_) => ErrorKind::Config,
            Error::Data(_) | Error::Csv { .. } => ErrorKind::Data,
            Error::Io { .. } => ErrorKind::Io,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
