//! Error type shared by all core modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Failures raised by tensor operations, model construction, corpus
/// handling, training and scoring.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A NaN or infinity was observed where a finite number is required.
    NonFinite { context: String },
    /// A token id is outside the vocabulary.
    TokenOutOfRange { id: u32, vocab_size: usize },
    /// A precondition on an argument was violated.
    InvalidArgument { context: String },
    /// The tape has already been consumed by a backward pass.
    TapeConsumed,
    /// `backward` was called on a non-scalar node.
    LossNotScalar { shape: Vec<usize> },
    /// A model is too large for an exhaustive finite-difference sweep.
    ModelTooLarge { scalars: usize, limit: usize },
    /// An empty input where at least one element is required.
    Empty { context: String },
    /// Two components that must share a vocabulary do not.
    VocabularyMismatch { lhs: String, rhs: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            CoreError::NonFinite { context } => write!(f, "non-finite value: {context}"),
            CoreError::TokenOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} out of range for vocabulary of size {vocab_size}")
            }
            CoreError::InvalidArgument { context } => write!(f, "invalid argument: {context}"),
            CoreError::TapeConsumed => write!(f, "tape already consumed by a backward pass"),
            CoreError::LossNotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            CoreError::ModelTooLarge { scalars, limit } => write!(
                f,
                "model has {scalars} scalar weights, finite-difference check is capped at {limit}; shrink the config"
            ),
            CoreError::Empty { context } => write!(f, "empty input: {context}"),
            CoreError::VocabularyMismatch { lhs, rhs } => {
                write!(f, "vocabulary fingerprints differ: {lhs} vs {rhs}")
            }
        }
    }
}

impl core::error::Error for CoreError {}
