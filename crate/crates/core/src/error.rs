//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator, solvers, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear-algebra routine failed (singular / non-PD system).
    #[error("numerical error: {0}")]
    Numeric(String),

    /// A Monte-Carlo signal gain collapsed to zero for UE (j, k).
    #[error("degenerate signal gain a[{j}][{k}] = 0")]
    DegenerateGain { j: usize, k: usize },

    /// A power-control solver could not produce a valid allocation.
    #[error("solver error: {0}")]
    Solver(String),

    /// Array or model dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed config, dataset, or model file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
