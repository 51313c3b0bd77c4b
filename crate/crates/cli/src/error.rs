use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] mstta_core::Error),
}

impl CliError {
    /// 2 for bad flags or configuration, 3 for I/O, 4 for invalid input data.
    pub fn exit_code(&self) -> u8 {
        use mstta_core::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Invalid { .. } => 4,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::OutOfRange { .. } | E::InfeasibleSpec(_) => 2,
                E::Io { .. } | E::Csv(_) => 3,
                _ => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
