// SPDX-License-Identifier: MIT OR Apache-2.0

//! Strategy construction: per-layer vectors, layer selection by weak-sample
//! ratio, sample assignment and per-algorithm profiles.

mod layer;
mod profile;
mod vectors;

use std::fmt;

use thiserror::Error;

pub use layer::{
    difference_activations, select_layer, weak_sample_ratio, LayerDiagnostics, LayerSelection, SteerVectorSet,
};
pub use profile::{assign_samples, build_profiles, Assignment, ProfileBuild};
pub use vectors::{aggregate_qr, category_steer_vectors};

use crate::algorithms::{AlgorithmRegistry, ExtractError};
use crate::linalg;
use crate::store::{ActivationSet, StoreError, StrategyBundle};

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{algorithm} failed at layer {layer}{}: {source}", category.as_ref().map(|c| format!(" in category `{c}`")).unwrap_or_default())]
    Extract {
        algorithm: String,
        category: Option<String>,
        layer: usize,
        #[source]
        source: ExtractError,
    },
    #[error("layer {layer} out of range (num_layers = {num_layers})")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("cannot aggregate an empty vector list")]
    EmptyAggregation,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("steer vector for `{algorithm}` has norm {norm}, expected 1")]
    NonUnitVector { algorithm: String, norm: f64 },
    #[error("algorithm registry is empty")]
    EmptyRegistry,
    #[error("no viable layer: every layer is degenerate or has only weak samples")]
    NoViableLayer,
    #[error("no viable strategy: no sample matched any algorithm")]
    NoViableStrategy,
    #[error("unknown sample id `{0}`")]
    UnknownSample(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub(crate) fn check_tau(tau: f64) -> Result<(), BuildError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(BuildError::InvalidTau(tau))
    }
}

/// Everything `build_bundle` learned on the way, for the human-readable report.
#[derive(Debug, Clone)]
pub struct BuildReport {
    pub layer: usize,
    pub tau: f64,
    pub diagnostics: Vec<LayerDiagnostics>,
    pub assignment: Assignment,
    pub omitted: Vec<String>,
    /// 5th percentile of cos(negative activation, own anchor) over assigned
    /// samples; a reasonable starting point for the runtime match threshold.
    pub suggested_match_threshold: Option<f64>,
}

pub struct BuildOutput {
    pub bundle: StrategyBundle,
    pub report: BuildReport,
}

/// Full construction: select l*, assign samples there and emit the bundle.
/// Bundle floats are rounded to f32 so the in-memory value equals what
/// `save_bundle` writes.
pub fn build_bundle(acts: &ActivationSet, registry: &AlgorithmRegistry, tau: f64) -> Result<BuildOutput, BuildError> {
    let selection = select_layer(acts, registry, tau)?;
    let layer = selection.layer;
    let vectors = &selection.vectors.per_layer[layer];
    finish(acts, vectors, layer, tau, selection.diagnostics)
}

/// Same as [`build_bundle`] but with the layer forced instead of selected.
pub fn build_bundle_at_layer(
    acts: &ActivationSet,
    registry: &AlgorithmRegistry,
    tau: f64,
    layer: usize,
) -> Result<BuildOutput, BuildError> {
    check_tau(tau)?;
    if layer >= acts.num_layers() {
        return Err(BuildError::LayerOutOfRange {
            layer,
            num_layers: acts.num_layers(),
        });
    }
    if registry.is_empty() {
        return Err(BuildError::EmptyRegistry);
    }
    let (vectors, diag) = layer::diagnose_layer(acts, &acts.category_rows(), layer, registry, tau)?;
    if !diag.is_viable() {
        return Err(BuildError::NoViableLayer);
    }
    finish(acts, &vectors, layer, tau, vec![diag])
}

fn finish(
    acts: &ActivationSet,
    vectors: &std::collections::BTreeMap<String, crate::algorithms::SteerVector>,
    layer: usize,
    tau: f64,
    diagnostics: Vec<LayerDiagnostics>,
) -> Result<BuildOutput, BuildError> {
    let diffs = difference_activations(acts, layer);
    let assignment = assign_samples(&diffs, acts.sample_ids(), vectors, tau)?;
    let built = build_profiles(acts, &assignment, vectors, layer)?;
    let bundle = StrategyBundle {
        model_id: acts.model_id().to_string(),
        issue: acts.issue().to_string(),
        num_layers: acts.num_layers(),
        layer,
        hidden_dim: acts.hidden_dim(),
        tau,
        beta_default: DEFAULT_BETA,
        profiles: built.profiles,
    }
    .quantized();
    bundle.validate()?;
    let suggested_match_threshold = anchor_similarity_percentile(acts, &bundle, 0.05);
    Ok(BuildOutput {
        report: BuildReport {
            layer,
            tau,
            diagnostics,
            assignment,
            omitted: built.omitted,
            suggested_match_threshold,
        },
        bundle,
    })
}

fn anchor_similarity_percentile(acts: &ActivationSet, bundle: &StrategyBundle, q: f64) -> Option<f64> {
    let index: std::collections::HashMap<&str, usize> = acts
        .sample_ids()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut sims: Vec<f64> = bundle
        .profiles
        .iter()
        .flat_map(|p| {
            p.assigned_ids.iter().filter_map(|id| {
                let row = linalg::to_f64(acts.neg_row(index[id.as_str()], bundle.layer));
                linalg::cosine(&row, &p.anchor)
            })
        })
        .collect();
    if sims.is_empty() {
        return None;
    }
    sims.sort_by(f64::total_cmp);
    let k = ((sims.len() - 1) as f64 * q).floor() as usize;
    Some(sims[k])
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tau = {}", self.tau)?;
        writeln!(f, "layer  weak_ratio  matches")?;
        for d in &self.diagnostics {
            let marker = if d.layer == self.layer { "*" } else { " " };
            let counts: Vec<String> = d.match_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(f, "{marker}{:<5} {:<11.4} {}", d.layer, d.weak_ratio, counts.join(" "))?;
            for (alg, why) in &d.skipped {
                writeln!(f, "       skipped {alg}: {why}")?;
            }
        }
        writeln!(f, "selected layer: {}", self.layer)?;
        for (alg, ids) in &self.assignment.by_algorithm {
            writeln!(f, "  {alg}: {} samples", ids.len())?;
        }
        for alg in &self.omitted {
            writeln!(f, "  {alg}: - (no sample matched)")?;
        }
        writeln!(f, "unmatched: {}", self.assignment.unmatched.len())?;
        if let Some(t) = self.suggested_match_threshold {
            writeln!(f, "suggested --match-threshold: {t:.4}")?;
        }
        Ok(())
    }
}
