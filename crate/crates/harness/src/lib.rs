//! Config ingestion, synthetic data, verification suites, benchmarks and CSV
//! reports for the `poolattn` CLI.

pub mod bench;
pub mod config;
pub mod error;
pub mod report;
pub mod synth;
pub mod verify;

pub use config::{Command, RunConfig};
pub use error::{HarnessError, Result};

/// Version of every CSV schema written by [`report`].
pub const SCHEMA_VERSION: u32 = 1;
