// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, SymmetricEigen};

use super::{ExtractError, LayerActivations, DEGENERACY_THRESHOLD};
use crate::linalg::{self, Matrix};

/// First principal component of the mean-centered difference rows.
///
/// The eigenproblem is solved on whichever Gram matrix is smaller: `C Cᵀ`
/// (`n × n`) when there are fewer rows than dimensions, else `Cᵀ C`.
pub fn pca_vector(acts: &LayerActivations) -> Result<Vec<f64>, ExtractError> {
    let n = acts.rows();
    if n < 2 {
        return Err(ExtractError::invalid("pca", format!("need at least 2 pairs, got {n}")));
    }
    let diffs = acts.differences();
    let mean = diffs.column_mean();
    let mut centered = diffs.clone();
    for i in 0..n {
        let row = centered.row_mut(i);
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let scale = linalg::norm(diffs.as_slice()).max(1.0);
    if linalg::norm(centered.as_slice()) < DEGENERACY_THRESHOLD * scale {
        return Err(ExtractError::degenerate("pca", "centered differences have rank 0"));
    }

    let mut v = top_component(&centered);
    let v_norm = linalg::norm(&v);
    if v_norm < DEGENERACY_THRESHOLD {
        return Err(ExtractError::degenerate("pca", "principal direction vanished"));
    }
    linalg::scale(&mut v, 1.0 / v_norm);
    linalg::align_sign(&mut v, &mean);
    Ok(v)
}

fn top_component(c: &Matrix) -> Vec<f64> {
    let (n, d) = (c.rows(), c.cols());
    let cm = DMatrix::from_row_slice(n, d, c.as_slice());
    if n <= d {
        let gram = &cm * cm.transpose();
        let u = top_eigenvector(gram);
        let v = cm.transpose() * u;
        v.iter().copied().collect()
    } else {
        let cov = cm.transpose() * &cm;
        top_eigenvector(cov).iter().copied().collect()
    }
}

fn top_eigenvector(sym: DMatrix<f64>) -> nalgebra::DVector<f64> {
    let eig = SymmetricEigen::new(sym);
    let (best, _) =
        eig.eigenvalues.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        );
    eig.eigenvectors.column(best).into_owned()
}
