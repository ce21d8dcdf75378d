//! Dense row-major matrices, cosine similarity and the `CKVT` file format.

mod file;
mod matrix;

pub use file::{decode_tensor, encode_tensor, load_tensor, save_tensor, Tensor, MAGIC, VERSION};
pub use matrix::Matrix;

use crate::error::{Error, Result};
use crate::metrics;

/// Norms below this are treated as zero; such vectors have similarity 0 with everything.
pub const ZERO_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim(format!(
            "cosine similarity of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(cosine_unchecked(a, b))
}

fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Full `|a| x |b|` cosine similarity table between the rows of two matrices.
///
/// Every entry counts as one similarity evaluation in [`metrics`].
pub fn pairwise_similarity(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "pairwise similarity of {}-column and {}-column matrices",
            a.cols(),
            b.cols()
        )));
    }
    let a_norms: Vec<f64> = a.row_iter().map(norm).collect();
    let b_norms: Vec<f64> = b.row_iter().map(norm).collect();
    let mut out = Vec::with_capacity(a.rows() * b.rows());
    for (ra, &na) in a.row_iter().zip(&a_norms) {
        for (rb, &nb) in b.row_iter().zip(&b_norms) {
            let sim = if na < ZERO_NORM || nb < ZERO_NORM {
                0.0
            } else {
                (dot(ra, rb) / (na * nb)).clamp(-1.0, 1.0)
            };
            out.push(sim);
        }
    }
    metrics::add_similarity_evals((a.rows() * b.rows()) as u64);
    Matrix::new(a.rows(), b.rows(), out)
}
