use std::path::{Path, PathBuf};
use std::process::ExitCode;

use meshrag_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("{failed} of {total} pairs could not be evaluated")]
    PartialEval { failed: usize, total: usize },
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_USAGE: u8 = 64;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    /// Attaches the file an error came from.
    pub fn file(path: &Path) -> impl FnOnce(Error) -> Self + '_ {
        move |source| CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::PartialEval { .. } => 1,
            CliError::Core(e) | CliError::File { source: e, .. } => core_code(e),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::NoNormals | Error::EmptySegmentation => 2,
        Error::BackendUnreachable { .. } => 3,
        Error::NoCorrespondences => 4,
        _ => 1,
    }
}
