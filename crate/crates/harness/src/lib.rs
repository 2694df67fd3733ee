//! Experiment runner and live-training server built on `handnet`.

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod record;
pub mod report;
pub mod serve;
pub mod train;

pub use config::{Dataset, ExperimentConfig, ExperimentId, ReportFormat, Subset};
pub use error::{HarnessError, Result};
pub use record::RunRecord;
