//! Failure categories and their process exit codes.

use plenoctree::Error;

/// Exit code for invalid flags, config files or arguments.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for unreadable, unwritable or malformed files.
pub const EXIT_IO: i32 = 3;
/// Exit code for non-finite values and divergence.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: String) -> Self {
        Self { code: EXIT_CONFIG, message }
    }

    pub fn io(message: String) -> Self {
        Self { code: EXIT_IO, message }
    }

    pub fn numeric(message: String) -> Self {
        Self { code: EXIT_NUMERIC, message }
    }
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Pixel { source, .. } => code_of(source),
        Error::Io { .. } | Error::Format { .. } | Error::Codec(_) => EXIT_IO,
        Error::NonFinite(_) | Error::RayNumeric { .. } | Error::Oracle { .. } | Error::Diverged { .. } => EXIT_NUMERIC,
        Error::InvalidArgument(_)
        | Error::NonUnitDirection { .. }
        | Error::LengthMismatch { .. }
        | Error::NotPowerOfTwo(_)
        | Error::EmptyDataset => EXIT_CONFIG,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: code_of(&e), message: e.to_string() }
    }
}
