use std::path::{Path, PathBuf};

use poi_xaudit_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("MissingDataset: {} not found", .0.display())]
    MissingDataset(PathBuf),
    #[error("MissingCheckpoint: {} not found", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("MissingArtifact: {0}")]
    MissingArtifact(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::MissingDataset(_) | Self::MissingCheckpoint(_) | Self::MissingArtifact(_) => 3,
            Self::Io { .. } => 4,
            Self::Core(e) => match e {
                CoreError::Numeric(_) | CoreError::Shape(_) => 5,
                CoreError::BadK { .. } | CoreError::Domain(_) => 2,
                _ => 4,
            },
        }
    }
}
