// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, HashMap};

use super::layer::{best_match, check_vectors};
use super::{check_tau, BuildError};
use crate::algorithms::SteerVector;
use crate::linalg::{self, Matrix};
use crate::store::{ActivationSet, StrategyProfile};

/// Samples grouped by the algorithm whose vector they align with best.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    pub by_algorithm: BTreeMap<String, Vec<String>>,
    /// Samples whose best cosine is below τ; they join no profile.
    pub unmatched: Vec<String>,
    /// Cosine of each assigned sample with its algorithm's vector.
    pub similarity: BTreeMap<String, f64>,
}

impl Assignment {
    pub fn assigned_count(&self) -> usize {
        self.by_algorithm.values().map(Vec::len).sum()
    }
}

/// Assigns each row of `diffs` (labelled by `ids`) to its argmax-cosine
/// algorithm when that cosine reaches `tau`.
pub fn assign_samples(
    diffs: &Matrix,
    ids: &[String],
    vectors: &BTreeMap<String, SteerVector>,
    tau: f64,
) -> Result<Assignment, BuildError> {
    check_tau(tau)?;
    check_vectors(vectors, diffs.cols())?;
    if ids.len() != diffs.rows() {
        return Err(BuildError::DimensionMismatch {
            expected: diffs.rows(),
            found: ids.len(),
        });
    }
    let mut out = Assignment::default();
    for (row, id) in diffs.iter_rows().zip(ids) {
        match best_match(row, vectors) {
            Some((alg, c)) if c >= tau => {
                out.by_algorithm.entry(alg.to_string()).or_default().push(id.clone());
                out.similarity.insert(id.clone(), c);
            }
            _ => out.unmatched.push(id.clone()),
        }
    }
    Ok(out)
}

/// Profiles built from an assignment, plus the algorithms that got no samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBuild {
    pub profiles: Vec<StrategyProfile>,
    pub omitted: Vec<String>,
}

/// Anchor = mean negative activation, strength = mean projection of the
/// difference onto the steer vector, both over each algorithm's assigned
/// samples at `layer`. Algorithms with no samples are omitted.
pub fn build_profiles(
    acts: &ActivationSet,
    assignment: &Assignment,
    vectors: &BTreeMap<String, SteerVector>,
    layer: usize,
) -> Result<ProfileBuild, BuildError> {
    if layer >= acts.num_layers() {
        return Err(BuildError::LayerOutOfRange {
            layer,
            num_layers: acts.num_layers(),
        });
    }
    let index: HashMap<&str, usize> = acts
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut profiles = Vec::new();
    let mut omitted = Vec::new();
    for (id, v) in vectors {
        let assigned = assignment.by_algorithm.get(id).map(Vec::as_slice).unwrap_or(&[]);
        if assigned.is_empty() {
            log::info!("algorithm `{id}` matched no samples at layer {layer}; omitted");
            omitted.push(id.clone());
            continue;
        }
        let rows = assigned
            .iter()
            .map(|s| {
                index
                    .get(s.as_str())
                    .copied()
                    .ok_or_else(|| BuildError::UnknownSample(s.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let slice = acts.layer_rows(layer, &rows);
        let anchor = slice.neg().column_mean();
        let diffs = slice.differences();
        let total = diffs.iter_rows().fold(0.0, |acc, d| acc + linalg::dot(d, &v.values));
        let strength = total / rows.len() as f64;
        if strength < 0.0 {
            log::warn!("algorithm `{id}` has negative default strength {strength} at layer {layer}");
        }
        profiles.push(StrategyProfile {
            steer: SteerVector { layer, ..v.clone() },
            anchor,
            strength,
            assigned_ids: assigned.to_vec(),
        });
    }
    if profiles.is_empty() {
        return Err(BuildError::NoViableStrategy);
    }
    Ok(ProfileBuild { profiles, omitted })
}
