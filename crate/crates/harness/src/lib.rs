//! Experiment harness: configuration, the pipeline stages behind the
//! `primwalk` command line, output files and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
