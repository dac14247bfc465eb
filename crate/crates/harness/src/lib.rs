//! Experiment harness: data ingestion, configuration and the staged
//! pipeline behind the `specens` command.

pub mod config;
pub mod data;
pub mod error;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use data::DatasetBundle;
pub use error::HarnessError;
pub use pipeline::{Pipeline, Stage, StageStatus};
