//! End-to-end pipeline behind the command-line tool.

pub mod config;
pub mod plot;
pub mod run;
pub mod sweep;

use std::path::{Path, PathBuf};

pub use config::{Layout, RunConfig, RunLayout, SeedLayout};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("io: {}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing-input: no {what} at {}; {hint}", path.display())]
    Missing { what: &'static str, path: PathBuf, hint: &'static str },
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Stage name; also the prefix of the message.
    pub fn stage(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Stage { stage, .. } => stage,
            Self::Io { .. } => "io",
            Self::Missing { .. } => "missing-input",
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: std::fmt::Display> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage { stage, message: e.to_string() })
    }
}
