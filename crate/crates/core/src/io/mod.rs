//! File formats and run configuration.

pub mod array;
pub mod checkpoint;
pub mod config;
pub mod grid;
pub mod idx;
pub mod metrics;
