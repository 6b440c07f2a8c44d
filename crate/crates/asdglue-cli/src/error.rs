use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Lib(#[from] asdglue::Error),
}

impl CliError {
    /// 3 for anything the user can fix in the inputs, 4 for numerical and
    /// algorithmic failures, 1 for I/O trouble on the output side.
    pub fn exit_code(&self) -> i32 {
        use asdglue::Error as E;
        match self {
            CliError::Config(_) | CliError::Read { .. } => 3,
            CliError::Lib(E::Config(_) | E::Domain(_) | E::Precondition(_)) => 3,
            CliError::Lib(E::Numerical(_) | E::NonFinite { .. } | E::Algorithm(_)) => 4,
            CliError::Write { .. } | CliError::Csv(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
