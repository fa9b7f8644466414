use std::fmt;

/// Errors raised by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value violates a constraint. `key` is the dotted
    /// config path (or the parameter name when no config file is involved).
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    /// A trajectory produced a non-finite value or a quadrature failed.
    #[error("numerical failure at t = {time}: {message}")]
    Numerical { time: f64, message: String },

    /// Caller broke an operation precondition (e.g. `s > t`).
    #[error("contract violation: {0}")]
    Contract(String),

    /// More replicas failed than the exclusion budget allows.
    #[error("{failed} of {attempted} replicas failed, exceeding the exclusion budget")]
    FailureBudget { failed: usize, attempted: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(key: impl Into<String>, message: impl fmt::Display) -> Self {
        Error::Config {
            key: key.into(),
            message: message.to_string(),
        }
    }

    pub fn numerical(time: f64, message: impl fmt::Display) -> Self {
        Error::Numerical {
            time,
            message: message.to_string(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Prefixes the key of a configuration error with `prefix.`.
    pub fn within(self, prefix: &str) -> Self {
        match self {
            Error::Config { key, message } => Error::Config {
                key: if key.is_empty() {
                    prefix.to_string()
                } else {
                    format!("{prefix}.{key}")
                },
                message,
            },
            other => other,
        }
    }
}
