//! Configuration, file I/O, batch generation and sweeps.

pub mod config;
pub mod dataset;
pub mod image_io;
pub mod render;
pub mod sweep;

pub use config::{GenerationConfig, MergeMode};
pub use dataset::{generate_dataset, render_index, BackgroundSet, DatasetSummary};
pub use render::{Generator, RenderOutput, RenderRecord};
pub use sweep::{measure_orientation, measure_width, sweep_factor, SweepFactor, SweepOutput};
