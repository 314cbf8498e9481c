//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spec parse error: {0}")]
    SpecParse(String),

    #[error("spec validation failed:\n{}", .0.join("\n"))]
    SpecInvalid(Vec<String>),

    #[error("search expansion error: {0}")]
    Search(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("memory is empty: {0}")]
    EmptyMemory(String),

    #[error("insufficient data: have {have}, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("non-finite loss at frame {frame}: {detail}")]
    NonFiniteLoss { frame: u64, detail: String },

    #[error("environment error: {0}")]
    Env(String),

    #[error("run error: {0}")]
    Run(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn length(context: impl Into<String>, left: usize, right: usize) -> Self {
        Error::LengthMismatch {
            context: context.into(),
            left,
            right,
        }
    }
}
