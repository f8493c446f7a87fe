//! Config-driven pipeline around `kernel-mor-core`: stages, on-disk artifacts and plots.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;

pub use config::PipelineConfig;
pub use error::CliError;
pub use pipeline::{Options, Outcome, Pipeline, Stage};
