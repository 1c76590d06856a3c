use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] metrocast::Error),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: metrocast::Error },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::File { source: e, .. } => e.kind(),
            CliError::Usage(_) => "Usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Report { error: self.kind(), message: self.to_string() })
            .expect("error report serializes")
    }
}

/// Attaches the offending path to a core error.
pub fn at(path: &Path) -> impl FnOnce(metrocast::Error) -> CliError + '_ {
    move |source| CliError::File { path: path.to_path_buf(), source }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}
