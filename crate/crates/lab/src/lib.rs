//! Configuration, execution and provenance for reflect-core experiments.

pub mod config;
pub mod manifest;
pub mod run;
pub mod validate;

use std::path::Path;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};
pub use manifest::{RunManifest, MANIFEST_FILE};
pub use run::{execute, Outcome, Subcommand};
pub use validate::{validate, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: reflect_core::Error,
    },
    #[error("io: {0}")]
    Io(String),
}

impl LabError {
    pub fn io(path: &Path, e: std::io::Error) -> LabError {
        LabError::Io(format!("{}: {e}", path.display()))
    }

    pub fn runtime(context: impl Into<String>, source: reflect_core::Error) -> LabError {
        LabError::Runtime {
            context: context.into(),
            source,
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => EXIT_CONFIG,
            LabError::Runtime { .. } | LabError::Io(_) => EXIT_RUNTIME,
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
