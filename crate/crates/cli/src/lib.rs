//! Command-line pipeline: synthetic data, diffusion augmentation, load
//! forecasting, identification and dispatch reports.

pub mod config;
pub mod pipeline;

pub use config::Config;
pub use pipeline::{Pipeline, System};
