use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid address {0:?}")]
    InvalidAddress(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown user {0}")]
    UnknownUser(u32),

    #[error("user {user} is not a member of cluster {cluster}")]
    NotAMember { user: u32, cluster: u64 },

    #[error("internal state violated: {0}")]
    InternalState(String),

    #[error("value {0} outside [0, 1]")]
    Domain(f64),

    #[error("not computable: {0}")]
    NotComputable(&'static str),

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

impl Error {
    /// Process exit code used by the command-line tool for this error class.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Io(_) => 3,
            Error::Format(_) | Error::InvalidAddress(_) => 4,
            Error::Snapshot(_) => 5,
            Error::NotComputable(_) => 6,
            Error::UnknownUser(_) | Error::NotAMember { .. } | Error::InternalState(_) => 70,
        }
    }
}
