//! Trajectory prediction for heterogeneous road agents.
//!
//! The crate covers the whole pipeline: a synthetic scenario generator for
//! mixed traffic (vehicles, bicycles, pedestrians), a dynamically built
//! scene graph over agents and frames, a two-layer LSTM model that first
//! propagates per-instance interactions and then refines them through
//! per-category summary nodes, training with Adam, and an ADE/FDE
//! evaluation harness with baselines.
//!
//! Gradients come from an in-crate reverse-mode tape ([`autodiff`]); the
//! model emits a bivariate Gaussian over the next position and is trained
//! by negative log-likelihood.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod graph;
pub mod model;
pub mod nn;
pub mod train;

/// Crate-wide error type. Variants map onto process exit codes in the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or sizes that cannot be combined.
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// Input outside the mathematical domain of an operation.
    #[error("numeric domain violation: {0}")]
    Domain(String),
    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// An API was called with arguments that can never be valid.
    #[error("usage error: {0}")]
    Usage(String),
    /// Bad or inconsistent run configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed input file content.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    /// Structurally well-formed input that violates a data invariant.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A broken internal invariant; always a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Io(_) | Error::Parse { .. } => 3,
            Error::NonFinite(_) | Error::Domain(_) => 4,
            Error::Dim(_) | Error::Validation(_) | Error::Internal(_) => 5,
        }
    }
}
