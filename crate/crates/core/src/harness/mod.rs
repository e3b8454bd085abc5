//! Experiment harness: configuration files, parameter sweeps and metrics CSV.

mod config;
mod sweep;

pub use config::*;
pub use sweep::*;
