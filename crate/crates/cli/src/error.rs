use std::fmt;

use odf_core::OdfError;
use odf_net::NetError;

/// Exit code 1: bad flags, bad input files, incompatible checkpoint.
/// Exit code 2: the computation itself failed.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Computation(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Computation(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Computation(_) => "computation",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Computation(m) => m,
        }
    }

    /// One line: `error kind=<kind> code=<n> message="<escaped>"`.
    pub fn line(&self) -> String {
        format!("error kind={} code={} message={:?}", self.kind(), self.exit_code(), self.message())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl From<OdfError> for CliError {
    fn from(e: OdfError) -> Self {
        match e {
            OdfError::DegenerateFrame(_) | OdfError::Shape(_) | OdfError::IndexOutOfRange { .. } => {
                CliError::Computation(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Core(inner) => inner.into(),
            NetError::NonFiniteLoss { .. } | NetError::Diverged { .. } => CliError::Computation(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}
