use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Core(#[from] otcf::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 usage or validation, 3 numerical, 4 resource guard.
    pub fn exit_code(&self) -> i32 {
        use otcf::Error as E;
        match self {
            CliError::Usage(_) | CliError::Write { .. } => 2,
            CliError::SelfCheck(_) => 3,
            CliError::Core(e) => match e {
                E::TooLarge { .. } => 4,
                E::Asymmetric(_)
                | E::NotPositiveSemidefinite(_)
                | E::Singular(_)
                | E::Separation(_)
                | E::Numerical(_)
                | E::ReplicateFailures { .. } => 3,
                _ => 2,
            },
        }
    }
}
