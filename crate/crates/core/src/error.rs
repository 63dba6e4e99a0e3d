use alloc::string::String;
use core::fmt;

/// Errors produced by the poisoning pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Malformed or inconsistent inputs: bad configuration values, shape
    /// mismatches, out-of-range labels, unpoisonable instances.
    Validation(String),
    /// A pluggable backend (surrogate adapter) failed or misbehaved.
    Backend(String),
    /// A numeric failure during optimization, e.g. a non-finite loss.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::Backend(msg) => write!(f, "backend error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
