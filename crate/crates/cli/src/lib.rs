//! Experiment runner for the `pimml` binary: dataset generation, training
//! runs with optional oracle comparison, scaling sweeps and LUT checks.
//!
//! Every run appends one [`RunRecord`] row to a CSV report.

pub mod commands;
pub mod config;
pub mod record;

use std::fmt;

use pimml_core::{Error, ErrorKind};

pub use commands::{
    gen_data, lut_check, run_scale, run_train, DataSource, GenArgs, LutCheckArgs, LutCheckOutcome, ScaleArgs,
    SweepKind, SynthKind, TrainArgs,
};
pub use config::Settings;
pub use record::{append_records, read_report, RunRecord, REPORT_VERSION};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;
pub const EXIT_OVERFLOW: i32 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            msg: msg.into(),
        }
    }

    pub fn failure(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_FAILURE,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Capacity => EXIT_CAPACITY,
        ErrorKind::Overflow => EXIT_OVERFLOW,
        ErrorKind::Data | ErrorKind::Io => EXIT_FAILURE,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: exit_code(e.kind()),
            msg: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pimml_core::fixedpoint::FixedError;

    #[test]
    fn kinds_map_to_codes() {
        let overflow: CliError = Error::Fixed(FixedError::AccumulatorOverflow).into();
        assert_eq!(overflow.code, 4);
        let cap: CliError = Error::Capacity {
            core: 0,
            needed: 10,
            available: 1,
        }
        .into();
        assert_eq!(cap.code, 3);
        assert_eq!(CliError::from(Error::Param("x".into())).code, 2);
        assert_eq!(CliError::from(Error::Data("x".into())).code, 1);
    }
}
