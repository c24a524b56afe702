//! Crate-wide error type.

use thiserror::Error;

/// Which kernel solve a [`Error::SingularBeyondPolicy`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStage {
    /// The retain-retain kernel solve.
    RetainKernel,
    /// The Schur complement inversion.
    Schur,
    /// A solve outside the scrub pipeline.
    General,
}

impl std::fmt::Display for SolveStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStage::RetainKernel => write!(f, "rr"),
            SolveStage::Schur => write!(f, "schur"),
            SolveStage::General => write!(f, "general"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: max |A - A^T| = {max_asym:e} exceeds tolerance")]
    NotSymmetric { max_asym: f64 },

    #[error("factorization failed at {stage} stage even at max jitter scale {max_scale:e}")]
    SingularBeyondPolicy { stage: SolveStage, max_scale: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("mask strategy {strategy} is not valid for architecture {architecture}")]
    InvalidStrategy {
        strategy: String,
        architecture: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad magic number in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        got: u32,
    },

    #[error("truncated file {path}: declared {declared} bytes of payload, found {found}")]
    TruncatedFile {
        path: String,
        declared: usize,
        found: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelRange { label: usize, num_classes: usize },

    #[error("unknown class {class}: dataset has {num_classes} classes")]
    UnknownClass { class: usize, num_classes: usize },

    #[error("no samples selected by split filter {filter}")]
    EmptySplit { filter: String },

    #[error("estimated memory {estimate} bytes exceeds budget {budget} bytes")]
    BudgetExceeded { estimate: u64, budget: u64 },

    #[error("checkpoint format error in {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
