//! Scenario files, pipeline stages, trajectory and report files, batch
//! experiments and the `cmg` command line for [`cmg_core`].
//!
//! Each CLI verb maps to one function in [`pipeline`]: [`pipeline::run_guess`],
//! [`pipeline::run_solve`], [`pipeline::run_check`], [`pipeline::run_batch`]
//! and [`files::emit_plotdata`].

pub mod config;
pub mod files;
pub mod pipeline;
pub mod report;
pub mod scenario;

pub use config::{load_config, parse_config, GeometryKind, ScenarioConfig};

/// Failure of a harness command. [`HarnessError::exit_code`] gives the
/// process exit status.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: cmg_core::Error,
    },

    #[error("solver stalled: {0}")]
    Stall(String),

    #[error("validation failed: {0}")]
    Validation(String),
}

impl HarnessError {
    pub fn stage(stage: &'static str, source: cmg_core::Error) -> Self {
        Self::Stage { stage, source }
    }

    /// 2 for configuration errors, 3 for a stalled solve, 4 for failed
    /// validation, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stall(_) => 3,
            Self::Validation(_) => 4,
            Self::Io(_) | Self::Stage { .. } => 1,
        }
    }
}
