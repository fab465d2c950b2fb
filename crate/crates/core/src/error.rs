//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors produced by tensor ops, model construction, and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// Two sequences that must have equal length do not.
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    /// A value that must be finite is NaN or infinite.
    NonFinite { what: &'static str },
    /// A class label is outside `[0, num_classes)`.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// An argument violates its documented range or precondition.
    InvalidArgument { arg: &'static str, reason: String },
    /// An operation that needs at least one element got none.
    Empty { what: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            Error::LengthMismatch { op, left, right } => {
                write!(f, "length mismatch in {op}: {left} vs {right}")
            }
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::InvalidArgument { arg, reason } => {
                write!(f, "invalid argument {arg}: {reason}")
            }
            Error::Empty { what } => write!(f, "{what} must not be empty"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
