//! Episode runner, metrics, configuration, checkpoints, CSV export and CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod episode;
pub mod export;
pub mod metrics;
pub mod workflow;

pub use checkpoint::Checkpoint;
pub use config::{MapKind, RunConfig};
pub use episode::{compare, run_episode, run_episode_in, Episode};
pub use metrics::{MetricsRecord, StepMetrics, Summary, TrajectoryLog};
