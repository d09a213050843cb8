// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;

use super::BuildError;
use crate::algorithms::{AlgorithmRegistry, SteerVector};
use crate::linalg;
use crate::store::ActivationSet;

/// One steer vector per declared category (categories without samples are
/// skipped), each computed by `algorithm` on that category's rows at `layer`.
pub fn category_steer_vectors(
    acts: &ActivationSet,
    layer: usize,
    algorithm: &str,
    registry: &AlgorithmRegistry,
) -> Result<Vec<(String, SteerVector)>, BuildError> {
    category_vectors_with_rows(acts, &acts.category_rows(), layer, algorithm, registry)
}

pub(crate) fn category_vectors_with_rows(
    acts: &ActivationSet,
    category_rows: &[(String, Vec<usize>)],
    layer: usize,
    algorithm: &str,
    registry: &AlgorithmRegistry,
) -> Result<Vec<(String, SteerVector)>, BuildError> {
    if layer >= acts.num_layers() {
        return Err(BuildError::LayerOutOfRange {
            layer,
            num_layers: acts.num_layers(),
        });
    }
    category_rows
        .iter()
        .map(|(category, rows)| {
            let slice = acts.layer_rows(layer, rows);
            registry
                .extract(algorithm, &slice, layer)
                .map(|v| (category.clone(), v))
                .map_err(|source| BuildError::Extract {
                    algorithm: algorithm.to_string(),
                    category: Some(category.clone()),
                    layer,
                    source,
                })
        })
        .collect()
}

/// QR of the `d × k` matrix whose columns are `vectors` (in
/// order); returns the first column of `Q`, flipped so that it has a
/// non-negative dot product with the mean input vector (first nonzero
/// component positive when that dot product vanishes).
pub fn aggregate_qr(vectors: &[SteerVector]) -> Result<SteerVector, BuildError> {
    let first = vectors.first().ok_or(BuildError::EmptyAggregation)?;
    let d = first.dim();
    if let Some(bad) = vectors.iter().find(|v| v.dim() != d) {
        return Err(BuildError::DimensionMismatch {
            expected: d,
            found: bad.dim(),
        });
    }
    // QR of one unit column is that column; skip the reflections so the
    // result is bit-identical to the input
    if let [only] = vectors {
        if (linalg::norm(&only.values) - 1.0).abs() <= 1e-12 {
            return Ok(only.clone());
        }
    }
    let a = DMatrix::from_fn(d, vectors.len(), |i, j| vectors[j].values[i]);
    let mut q1: Vec<f64> = a.qr().q().column(0).iter().copied().collect();

    let mut mean = vec![0.0; d];
    for v in vectors {
        linalg::add_assign(&mut mean, &v.values);
    }
    linalg::scale(&mut mean, 1.0 / vectors.len() as f64);
    linalg::align_sign(&mut q1, &mean);
    Ok(SteerVector {
        algorithm_id: first.algorithm_id.clone(),
        layer: first.layer,
        values: q1,
    })
}
