//! Command-line pipeline around `carbon-core`: configuration, stage
//! orchestration, CSV reports, SVG charts and the run manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::{Overrides, RunConfig, Settings};
pub use error::{CliError, CliResult};
pub use pipeline::{run_pipeline, PipelineReport};
