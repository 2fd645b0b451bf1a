use thiserror::Error;

use crate::atom::LevelLabel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("level {0} is not part of the atom model")]
    UnknownLevel(LevelLabel),
    #[error("level {0} has zero total decay rate")]
    NoDecay(LevelLabel),
    #[error("{0} and {1} are not connected by an electric-dipole transition")]
    NotDipoleConnected(LevelLabel, LevelLabel),
    #[error("invalid quantum number: {0}")]
    InvalidState(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("lasers {0} form a closed loop; no static rotating frame exists")]
    FrameLoop(String),
    #[error("no emission path: {0}")]
    NoEmissionPath(String),
    #[error("arrival density is zero everywhere")]
    EmptyDensity,
    #[error("photon arrivals are not time-ordered at index {0}")]
    Unordered(usize),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("background only: {0}")]
    BackgroundOnly(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.to_string(), reason: reason.into() }
    }

    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config { key: key.to_string(), reason: reason.into() }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BackgroundOnly(_) => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        }
    }
}
