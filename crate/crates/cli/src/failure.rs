use std::fmt;

use uld_core::Error;

/// Command failure carrying its exit status class.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration: exit 1.
    Usage(String),
    /// Unreadable or invalid inputs: exit 2.
    Data(String),
    /// Non-finite values during computation: exit 3.
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => Failure::Usage(msg),
            Error::NonFinite(_) | Error::GradCheckNonFinite { .. } => Failure::Numeric(msg),
            Error::Dimension(_) | Error::Data(_) | Error::Format { .. } | Error::Io { .. } => Failure::Data(msg),
        }
    }
}
