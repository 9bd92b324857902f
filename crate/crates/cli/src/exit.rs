use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use meshfield::Error;

pub const CONFIG: u8 = 2;
pub const NUMERIC: u8 = 3;
pub const INCOMPATIBLE: u8 = 4;

/// A failed command: message for stderr and process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: CONFIG, message: message.into() }
    }

    pub fn incompatible(message: impl Into<String>) -> Self {
        Failure { code: INCOMPATIBLE, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::config(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            e if e.is_numeric() => NUMERIC,
            Error::Incompatible(_) | Error::Format(_) => INCOMPATIBLE,
            _ => CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}
