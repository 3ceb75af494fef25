//! Crate-wide error type.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, activations, routing, and the harness.
#[derive(Debug)]
pub enum Error {
    /// Tensor extents do not line up (wrong rank, channel mismatch, ...).
    Shape(String),
    /// Invalid configuration value (kernel size, stride, width multiplier, ...).
    Config(String),
    /// Mathematical domain violation (empty input, beta <= 0 where a positive
    /// switching factor is required, p1 == p2 where distinct slopes are required).
    Domain(String),
    /// API misuse (wrong layer kind for an operation, unknown parameter name).
    Usage(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Checkpoint decode failure.
    Checkpoint(CheckpointError),
    /// Training produced a non-finite loss.
    Diverged { step: usize, lr: f64 },
}

/// Reasons a checkpoint fails to load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    /// Leading magic bytes are not `ACON`.
    BadMagic,
    /// Format version is not supported by this build.
    Version { found: u32, expected: u32 },
    /// The byte stream ended before the declared contents.
    Truncated,
    /// Trailing CRC32 does not match the payload.
    Checksum { stored: u32, computed: u32 },
    /// Structurally invalid entry (bad dtype tag, non-UTF8 name, ...).
    Corrupt(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
            Error::Checkpoint(err) => write!(f, "checkpoint error: {err}"),
            Error::Diverged { step, lr } => {
                write!(f, "non-finite loss at step {step} (lr = {lr:e})")
            }
        }
    }
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "bad magic (expected `ACON`)"),
            CheckpointError::Version { found, expected } => {
                write!(f, "unsupported format version {found} (expected {expected})")
            }
            CheckpointError::Truncated => write!(f, "byte stream truncated"),
            CheckpointError::Checksum { stored, computed } => {
                write!(f, "crc32 mismatch (stored {stored:#010x}, computed {computed:#010x})")
            }
            CheckpointError::Corrupt(msg) => write!(f, "corrupt entry: {msg}"),
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

impl From<CheckpointError> for Error {
    fn from(err: CheckpointError) -> Self {
        Error::Checkpoint(err)
    }
}
