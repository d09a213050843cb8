// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steer-vector extractors: each maps one layer's paired activations to a
//! single unit direction pointing from undesired toward desired behavior.
//!
//! Sign conventions:
//! - `md`: sign of the raw mean difference.
//! - `pca`: aligned with the mean difference; if orthogonal, first nonzero
//!   component positive.
//! - `lr`: toward the positive class.
//! - `kmeans`: centroid holding most positive rows minus the other centroid.

mod kmeans;
mod lr;
mod md;
mod pca;
mod registry;

use thiserror::Error;

use crate::linalg::Matrix;

pub use kmeans::{kmeans_vector, KMEANS_MAX_ITERS};
pub use lr::{lr_vector, lr_vector_with, LrConfig};
pub use md::md_vector;
pub use pca::pca_vector;
pub use registry::{AlgorithmRegistry, Extractor, BUILTIN_ALGORITHMS};

/// Pre-normalization norm below which a direction is rejected.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("{algorithm}: degenerate direction ({detail})")]
    Degenerate { algorithm: String, detail: String },
    #[error("lr: no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("{algorithm}: invalid input: {detail}")]
    InvalidInput { algorithm: String, detail: String },
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("algorithm `{0}` is already registered")]
    DuplicateAlgorithm(String),
    #[error("invalid algorithm id `{0}` (expected lowercase ASCII letters, digits, `_` or `-`)")]
    InvalidId(String),
}

impl ExtractError {
    pub(crate) fn degenerate(algorithm: &str, detail: impl Into<String>) -> Self {
        Self::Degenerate {
            algorithm: algorithm.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(algorithm: &str, detail: impl Into<String>) -> Self {
        Self::InvalidInput {
            algorithm: algorithm.to_string(),
            detail: detail.into(),
        }
    }
}

/// One layer's positive and negative activations (`n × d` each, row `i` of
/// both belonging to the same contrastive pair).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pos: Matrix,
    neg: Matrix,
}

impl LayerActivations {
    pub fn new(pos: Matrix, neg: Matrix) -> Result<Self, ExtractError> {
        if pos.rows() != neg.rows() || pos.cols() != neg.cols() {
            return Err(ExtractError::invalid(
                "input",
                format!(
                    "pos is {}×{} but neg is {}×{}",
                    pos.rows(),
                    pos.cols(),
                    neg.rows(),
                    neg.cols()
                ),
            ));
        }
        if pos.rows() == 0 || pos.cols() == 0 {
            return Err(ExtractError::invalid("input", "need at least one row and one column"));
        }
        if !pos.as_slice().iter().chain(neg.as_slice()).all(|x| x.is_finite()) {
            return Err(ExtractError::invalid("input", "non-finite activation"));
        }
        Ok(Self { pos, neg })
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows<R: AsRef<[f64]>>(pos: &[R], neg: &[R]) -> Result<Self, ExtractError> {
        Self::new(Matrix::from_rows(pos), Matrix::from_rows(neg))
    }

    /// For callers that already validated shape and finiteness.
    pub(crate) fn new_unchecked(pos: Matrix, neg: Matrix) -> Self {
        debug_assert_eq!((pos.rows(), pos.cols()), (neg.rows(), neg.cols()));
        Self { pos, neg }
    }

    pub fn pos(&self) -> &Matrix {
        &self.pos
    }

    pub fn neg(&self) -> &Matrix {
        &self.neg
    }

    pub fn rows(&self) -> usize {
        self.pos.rows()
    }

    pub fn dim(&self) -> usize {
        self.pos.cols()
    }

    /// Row-wise `pos − neg`.
    pub fn differences(&self) -> Matrix {
        self.pos.sub(&self.neg)
    }
}

/// A unit steer direction produced by `algorithm_id` at `layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteerVector {
    pub algorithm_id: String,
    pub layer: usize,
    pub values: Vec<f64>,
}

impl SteerVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}
