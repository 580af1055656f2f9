//! Dense linear algebra and reverse-mode gradient machinery.
//!
//! Everything is 64-bit and row-major. Reductions accumulate sequentially so
//! results are bit-reproducible given a seed.

mod check;
mod io;
mod linalg;
mod loss;
mod matrix;
mod tape;

pub use check::finite_difference_check;
pub use io::{matrix_from_bytes, matrix_to_bytes, read_matrix, write_matrix, NCMX_MAGIC};
pub use linalg::cholesky_solve;
pub use loss::{mse_loss, softmax_cross_entropy, softmax_rows};
pub use matrix::{affine, Matrix};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MathError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in input data")]
    NonFinite,
    #[error("non-finite values in {0}")]
    NonFiniteIn(String),
    #[error("target index {index} out of range for {cols} columns")]
    TargetOutOfRange { index: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("matrix file {path}: {reason} at byte offset {offset}")]
    Format { path: String, offset: u64, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
