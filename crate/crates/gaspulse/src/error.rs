//! Error type shared across the crate.

use std::path::PathBuf;

use crate::calibration::CalibrationFailure;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A time query fell outside a series' domain.
    #[error("time {t} s outside series domain [{start} s, {end} s]")]
    OutOfDomain { t: f64, start: f64, end: f64 },

    /// A solver state or derived waveform value became non-finite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A data file could not be ingested.
    #[error("ingestion error in {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    /// The dataset manifest is missing, unparseable, or inconsistent.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// No parameter set satisfies the calibration constraints.
    #[error("calibration infeasible: {reason}")]
    CalibrationInfeasible {
        reason: String,
        details: Box<CalibrationFailure>,
    },

    /// An error attributed to a specific trial of the dataset.
    #[error("trial {gas} level {level} trial {trial}: {source}")]
    InTrial {
        gas: String,
        level: u8,
        trial: u32,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn ingestion(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Ingestion {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Attach trial identity to an error bubbling out of a batch operation.
    pub fn in_trial(self, gas: impl ToString, level: u8, trial: u32) -> Self {
        Error::InTrial {
            gas: gas.to_string(),
            level,
            trial,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
