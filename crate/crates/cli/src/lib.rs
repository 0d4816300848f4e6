//! Batch pipeline around the `zephyr` library: synthesize a dataset,
//! generate hypotheses, train the scorer on seen objects, select poses for
//! unseen ones and evaluate them.

pub mod config;
pub mod error;
pub mod models;
pub mod overlay;
pub mod pipeline;

pub use config::{Overrides, PipelineConfig, DEFAULT_CONFIG};
pub use error::{CliError, CliResult};
pub use pipeline::{EstimateRecord, Manifest, Pipeline, Selection, SplitName, Target};
