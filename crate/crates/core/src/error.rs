use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },

    #[error("failure count {k} exceeds trial count {m}")]
    CountExceedsTrials { k: u64, m: u64 },

    #[error("trial count must be at least 1")]
    NoTrials,

    #[error("score sample is empty")]
    EmptySample,

    #[error("score at position {index} is {value}; scores must be finite and nonnegative")]
    InvalidScore { index: usize, value: f64 },

    #[error("no calibration tasks supplied")]
    NoTasks,

    #[error("{0} is not defined for the {1} family")]
    UnsupportedFamily(&'static str, &'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", path.display())]
    Data {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_unit_closed(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::OutOfRange {
            name,
            range: "[0, 1]",
            value,
        })
    }
}

pub(crate) fn check_unit_open(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(Error::OutOfRange {
            name,
            range: "(0, 1)",
            value,
        })
    }
}
