//! Staged, resumable experiment runs over an output directory.

pub mod cfdata;
pub mod config;
pub mod csv;
pub mod stages;

pub use config::{ExperimentConfig, Stage};
pub use csv::CsvTable;
pub use stages::{Axis, Run};
