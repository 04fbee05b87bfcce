//! Desk-scale experiment harness: tasks, deterministic runner, metrics,
//! checkpoints, and run comparison.

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod task;

use thiserror::Error;

pub use checkpoint::{Checkpoint, LayerOptState, RngState};
pub use compare::{compare_runs, load_run_summary, Comparison, RunSummary};
pub use config::{
    learning_rate_at, OptimizerKind, RunConfig, ScheduleKind, TaskKind, LR_SWEEP_GRID,
};
pub use metrics::{read_metrics, MetricRecord, MetricsSink};
pub use runner::{resume_experiment, run_experiment, RunOutput, Trainer};
pub use task::{Batch, Layer, Model, TaskInstance};

/// Errors from configuration, IO, or the training loop itself.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] crate::error::Error),

    #[error("training loss diverged at step {step}")]
    Diverged { step: u64 },

    #[error("layer {layer} failed at step {step}: {source}")]
    Layer {
        layer: String,
        step: u64,
        source: crate::error::Error,
    },
}

impl RunError {
    /// Whether the failure is a numerical blow-up of the run (as opposed to a
    /// configuration or IO problem).
    pub fn is_divergence(&self) -> bool {
        match self {
            RunError::Diverged { .. } => true,
            RunError::Layer { source, .. } => matches!(
                source,
                crate::error::Error::NonFiniteGradient | crate::error::Error::NonFiniteUpdate
            ),
            _ => false,
        }
    }
}
