//! Desk-scale continual-learning experiments around FIRE: synthetic task
//! streams, chunked training with reinitialization at every chunk start,
//! metric logging to CSV, checkpoints, ablations and summary reports.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod records;
pub mod report;
pub mod runner;
pub mod stream;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use records::MetricRecord;
pub use runner::{run_experiment, run_seed, RunOptions};
