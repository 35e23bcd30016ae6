//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset generation, model evaluation, training and
/// the analytical kernel routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("basis is rank deficient: {0}")]
    DegenerateBasis(String),

    #[error("dataset too large: {0}")]
    TooLarge(String),

    #[error("effective rank undefined for the zero matrix")]
    UndefinedRank,

    #[error("requested rank {requested} exceeds input dimension {dim}")]
    InvalidRank { requested: usize, dim: usize },

    #[error("more than 10% of mixing pairs had zero logits ({skipped}/{total})")]
    DegenerateLogits { skipped: usize, total: usize },

    #[error("pseudo-labels collapsed to a single class")]
    DegenerateLabels,

    #[error("class {class} has only {count} samples (need at least 3)")]
    InsufficientData { class: usize, count: usize },

    #[error("kappa argument {0} outside [-1, 1]")]
    Domain(f64),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("no sign change on [{lo}, {hi}]")]
    NoCrossing { lo: f64, hi: f64 },

    #[error("training diverged at step {step} (last finite loss {last_loss})")]
    Divergence { step: usize, last_loss: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
