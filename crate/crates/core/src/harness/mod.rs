//! Experiment harness: configuration, episodes, oracle, metrics, seed sweeps
//! and CSV output.

pub mod config;
pub mod episode;
pub mod metrics;
pub mod oracle;
pub mod output;
pub mod sweep;

pub use config::{BatchMode, DeltaSetting, ExperimentConfig, PRESETS};
pub use episode::{run_episode, simulate, EpisodeInputs};
pub use metrics::{regret_series, stability_report, StabilityReport};
pub use oracle::{oracle_trajectory, Oracle};
pub use sweep::{aggregate, seed_sweep, Aggregate, SweepResult};
