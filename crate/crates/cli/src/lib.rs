//! Batch front-end: scenario files in, CSV (and optional JSON) result files out.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;

pub use config::Scenario;
pub use error::{CliError, Result};
