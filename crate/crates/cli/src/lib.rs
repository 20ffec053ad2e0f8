//! Library side of the `lesionfuse` binary: file formats, report documents
//! and one function per subcommand.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod input;
pub mod report;

pub use error::{CliError, CliResult};

/// Toolkit version plus the versions of every file format it reads or writes.
pub const LONG_VERSION: &str =
    concat!(env!("CARGO_PKG_VERSION"), " (detections/annotations jsonl v1, report json v1, volume HUV1/HUVOL 1)");

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "LESIONFUSE_THREADS";
