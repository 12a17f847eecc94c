//! Library side of the `cdb` executable: settings resolution, experiment
//! layout and the four subcommands.

use std::fmt;

pub mod commands;
pub mod manifest;
pub mod settings;

pub use commands::{prepare, report, sweep, train};
pub use settings::Settings;

/// Bad command-line or config-file input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

/// Maps an error to the process exit code: 2 for configuration problems,
/// 3 for missing or malformed data, 4 for anything that failed at run time.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<cdb_core::Error>() {
            return if e.is_config_error() {
                EXIT_CONFIG
            } else if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_RUNTIME
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
    }
    EXIT_RUNTIME
}
