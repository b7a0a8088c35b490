//! Hierarchical fault-injection simulator of a cached disk-array controller.

pub mod codes;
pub mod config;
pub mod error;
pub mod kernel;
pub mod level1;
pub mod level2;
pub mod level3;
pub mod metrics;
pub mod report;
pub mod sim;
pub mod stats;
pub mod workload;
