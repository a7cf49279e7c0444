//! Command-line experiment runner: configuration, run orchestration and
//! artifact writing for co-learning and its baselines.

pub mod config;
pub mod harness;

pub use config::{ConfigError, Mode, RunConfig};
pub use harness::{run, HarnessError, HistoryRow};
