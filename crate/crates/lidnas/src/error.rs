use std::fmt;

use crate::genome::Violation;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the search engine.
#[derive(Debug)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    InvalidConfig(String),
    /// A genome failed validation; the violations name the offending slots.
    InvalidGenome(Vec<Violation>),
    /// A tensor or network shape does not line up.
    Shape(String),
    /// A non-finite value appeared during numeric computation.
    Numeric { op: String, detail: String },
    /// A mutation could not produce a valid child.
    Mutation(String),
    /// Block budget cannot be met even at minimum channel options.
    Unsatisfiable(String),
    /// Training diverged at the given epoch.
    Training { epoch: usize, detail: String },
    /// Structured-text parsing failed.
    Parse(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidGenome(violations) => {
                write!(f, "invalid genome ({} violations):", violations.len())?;
                for v in violations {
                    write!(f, " [{v}]")?;
                }
                Ok(())
            }
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Numeric { op, detail } => write!(f, "numeric error in {op}: {detail}"),
            Error::Mutation(msg) => write!(f, "mutation rejected: {msg}"),
            Error::Unsatisfiable(msg) => write!(f, "budget unsatisfiable: {msg}"),
            Error::Training { epoch, detail } => {
                write!(f, "training failed at epoch {epoch}: {detail}")
            }
            Error::Parse(msg) => write!(f, "parse error: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
