use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("missing artifact {}: run `boswe {producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("{} was produced by a different configuration (config {expected}, artifact {found}); rerun `boswe {producer}`", path.display())]
    StaleArtifact {
        path: PathBuf,
        producer: &'static str,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Core(#[from] boswe::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for bad or missing data, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::MissingArtifact { .. } | CliError::StaleArtifact { .. } => 2,
            CliError::Core(e) if e.is_data_error() => 2,
            CliError::Core(boswe::Error::Provenance { .. } | boswe::Error::InvalidInput(_)) => 2,
            CliError::Core(_) => 3,
        }
    }
}
