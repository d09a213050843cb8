// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::vectors::{aggregate_qr, category_vectors_with_rows};
use super::{check_tau, BuildError};
use crate::algorithms::{AlgorithmRegistry, SteerVector};
use crate::linalg::{self, Matrix};
use crate::store::ActivationSet;

/// Tolerance for the unit-norm contract on incoming steer vectors.
pub(crate) const UNIT_TOLERANCE: f64 = 1e-6;

/// Per-layer, per-algorithm aggregated steer vectors. Layers where an
/// algorithm failed simply lack that entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SteerVectorSet {
    pub per_layer: Vec<BTreeMap<String, SteerVector>>,
}

impl SteerVectorSet {
    pub fn layer(&self, layer: usize) -> &BTreeMap<String, SteerVector> {
        &self.per_layer[layer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub num_samples: usize,
    pub weak_count: usize,
    /// Fraction of samples whose best cosine against every vector is below τ.
    pub weak_ratio: f64,
    /// Non-weak samples attributed to their best-aligned algorithm.
    pub match_counts: BTreeMap<String, usize>,
    /// Algorithms that produced no vector at this layer, with the reason.
    pub skipped: BTreeMap<String, String>,
}

impl LayerDiagnostics {
    /// A layer is usable when it has at least one vector and one aligned sample.
    pub fn is_viable(&self) -> bool {
        self.weak_count < self.num_samples && !self.match_counts.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LayerSelection {
    pub layer: usize,
    pub diagnostics: Vec<LayerDiagnostics>,
    pub vectors: SteerVectorSet,
}

/// `D_l = H⁺_l − H⁻_l`, one row per sample.
pub fn difference_activations(acts: &ActivationSet, layer: usize) -> Matrix {
    acts.layer(layer).differences()
}

pub(crate) fn check_vectors(vectors: &BTreeMap<String, SteerVector>, dim: usize) -> Result<(), BuildError> {
    for (id, v) in vectors {
        if v.dim() != dim {
            return Err(BuildError::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        let n = linalg::norm(&v.values);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(BuildError::NonUnitVector {
                algorithm: id.clone(),
                norm: n,
            });
        }
    }
    Ok(())
}

/// Best `(algorithm, cosine)` for one difference row; ties go to the
/// lexicographically smallest id. `None` for (near-)zero rows.
pub(crate) fn best_match<'a>(row: &[f64], vectors: &'a BTreeMap<String, SteerVector>) -> Option<(&'a str, f64)> {
    let n = linalg::norm(row);
    if n < 1e-12 {
        return None;
    }
    let mut best: Option<(&str, f64)> = None;
    for (id, v) in vectors {
        let c = linalg::dot(row, &v.values) / n;
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((id.as_str(), c));
        }
    }
    best
}

/// Weak-sample ratio of `diffs` against `vectors` at threshold `tau`.
pub fn weak_sample_ratio(
    diffs: &Matrix,
    vectors: &BTreeMap<String, SteerVector>,
    tau: f64,
) -> Result<LayerDiagnostics, BuildError> {
    check_tau(tau)?;
    check_vectors(vectors, diffs.cols())?;
    let mut weak = 0usize;
    let mut match_counts = BTreeMap::new();
    for row in diffs.iter_rows() {
        match best_match(row, vectors) {
            Some((id, c)) if c >= tau => *match_counts.entry(id.to_string()).or_insert(0) += 1,
            _ => weak += 1,
        }
    }
    let n = diffs.rows();
    Ok(LayerDiagnostics {
        layer: vectors.values().next().map_or(0, |v| v.layer),
        num_samples: n,
        weak_count: weak,
        weak_ratio: if n == 0 { 1.0 } else { weak as f64 / n as f64 },
        match_counts,
        skipped: BTreeMap::new(),
    })
}

/// Aggregated vectors of every registered algorithm at one layer, plus the
/// reasons for algorithms that failed there.
pub(crate) fn layer_vectors(
    acts: &ActivationSet,
    category_rows: &[(String, Vec<usize>)],
    layer: usize,
    registry: &AlgorithmRegistry,
) -> (BTreeMap<String, SteerVector>, BTreeMap<String, String>) {
    let mut vectors = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for id in registry.list() {
        let result = category_vectors_with_rows(acts, category_rows, layer, id, registry).and_then(|cats| {
            let vs: Vec<SteerVector> = cats.into_iter().map(|(_, v)| v).collect();
            aggregate_qr(&vs)
        });
        match result {
            Ok(v) => {
                vectors.insert(id.to_string(), v);
            }
            Err(e) => {
                skipped.insert(id.to_string(), e.to_string());
            }
        }
    }
    (vectors, skipped)
}

pub(crate) fn diagnose_layer(
    acts: &ActivationSet,
    category_rows: &[(String, Vec<usize>)],
    layer: usize,
    registry: &AlgorithmRegistry,
    tau: f64,
) -> Result<(BTreeMap<String, SteerVector>, LayerDiagnostics), BuildError> {
    let (vectors, skipped) = layer_vectors(acts, category_rows, layer, registry);
    let diffs = difference_activations(acts, layer);
    let mut diag = weak_sample_ratio(&diffs, &vectors, tau)?;
    diag.layer = layer;
    diag.skipped = skipped;
    Ok((vectors, diag))
}

/// Computes vectors and diagnostics at every layer and picks the layer with
/// the lowest weak-sample ratio (smallest index on ties). Layers are
/// processed in parallel; results are reduced in layer order.
pub fn select_layer(
    acts: &ActivationSet,
    registry: &AlgorithmRegistry,
    tau: f64,
) -> Result<LayerSelection, BuildError> {
    check_tau(tau)?;
    if registry.is_empty() {
        return Err(BuildError::EmptyRegistry);
    }
    let category_rows = acts.category_rows();
    let per_layer: Vec<_> = (0..acts.num_layers())
        .into_par_iter()
        .map(|l| diagnose_layer(acts, &category_rows, l, registry, tau))
        .collect::<Result<_, _>>()?;
    let (vectors, diagnostics): (Vec<_>, Vec<_>) = per_layer.into_iter().unzip();
    let best = diagnostics
        .iter()
        .filter(|d| d.is_viable())
        .fold(None::<&LayerDiagnostics>, |best, d| match best {
            Some(b) if b.weak_ratio <= d.weak_ratio => Some(b),
            _ => Some(d),
        })
        .ok_or(BuildError::NoViableLayer)?;
    Ok(LayerSelection {
        layer: best.layer,
        diagnostics,
        vectors: SteerVectorSet { per_layer: vectors },
    })
}
