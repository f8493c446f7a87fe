use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing artifact {}: run `kernel-mor {producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("artifact {} is older than {}: re-run `kernel-mor {producer}`", path.display(), newer.display())]
    StaleArtifact {
        path: PathBuf,
        newer: PathBuf,
        producer: &'static str,
    },

    #[error("malformed artifact {}: {message}", path.display())]
    Artifact { path: PathBuf, message: String },

    #[error("{stage}: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: kernel_mor_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn artifact(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Artifact {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 for anything the user fixes in the config or by running an earlier stage, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::MissingArtifact { .. } | CliError::StaleArtifact { .. } => 2,
            CliError::Artifact { .. } | CliError::Numerical { .. } | CliError::Io { .. } => 1,
        }
    }
}

pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> StageContext<T> for kernel_mor_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Numerical { stage, source })
    }
}
