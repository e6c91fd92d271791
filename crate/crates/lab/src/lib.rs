//! Desk-scale laboratory around `sam2b-core`: experiment configuration,
//! dataset and checkpoint files, CSV reports and the `sam2b` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
