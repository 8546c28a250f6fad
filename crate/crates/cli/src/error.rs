use std::path::{Path, PathBuf};

use thiserror::Error;
use vgfne_core::feasible_set::ProjectionError;
use vgfne_core::game_model::SpecError;
use vgfne_core::seeker::SeekError;
use vgfne_core::simulator::SimError;
use vgfne_core::sls_core::SlsError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<SlsError> for CliError {
    fn from(e: SlsError) -> Self {
        match e {
            SlsError::Parse(_) | SlsError::Shape(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ProjectionError> for CliError {
    fn from(e: ProjectionError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<SeekError> for CliError {
    fn from(e: SeekError) -> Self {
        match e {
            SeekError::InadmissibleStep { .. } | SeekError::Shape(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            SimError::Shape(_) => CliError::Invalid(e.to_string()),
            SimError::Seek(s) => s.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
