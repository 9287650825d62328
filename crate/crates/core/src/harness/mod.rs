//! Command line, experiment presets, run manifests and analysis exports.

mod cli;
mod config;
mod exports;
mod manifest;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::demogen::DemoError;
use crate::models::ModelError;
use crate::trainers::TrainError;

pub use crate::metrics::{after_meets, meets_threshold, EmptyCurve};
pub use cli::{run, Cli, Command};
pub use config::{ExperimentConfig, Preset, PRESETS, SCHEMA_VERSION};
pub use exports::{
    code_proportions, export_embeddings, sample_views, write_bc_epochs, write_codes, write_curve,
    write_posterior_epochs, write_trajectories, EMBEDDING_META,
};
pub use manifest::{blob_hash, FileHash, Manifest};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Failed(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<diffcore::Error> for HarnessError {
    fn from(e: diffcore::Error) -> Self {
        HarnessError::Model(ModelError::Core(e))
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
