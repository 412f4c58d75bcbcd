use std::path::PathBuf;

use thiserror::Error;

/// Pipeline failures, each tied to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("missing artifact {} (run the `{stage}` stage first)", .file.display())]
    Missing { stage: String, file: PathBuf },

    #[error("{0}")]
    Numerical(String),

    #[error("i/o error on {}: {source}", .file.display())]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(path: impl Into<String>, message: impl ToString) -> Self {
        Self::Config { path: path.into(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Io { .. } => 1,
            Self::Missing { .. } => 2,
            Self::Numerical(_) => 3,
        }
    }

    /// Maps a core error raised while running `stage`.
    pub fn from_core(stage: &str, e: epialloc_core::Error) -> Self {
        use epialloc_core::Error as E;
        match e {
            E::Dimension(_) | E::Domain(_) => Self::config(stage, e),
            _ => Self::Numerical(format!("{stage}: {e}")),
        }
    }
}
