// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic activation sets with known directions planted at chosen layers.
//! Used by tests, demos and the `plant` CLI subcommand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::store::{ActivationSet, SteerSample, StoreError};

/// A group of samples sharing one negative-activation center and one
/// contrast direction at the signal layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConcept {
    pub category: String,
    pub count: usize,
    pub neg_center: Vec<f64>,
    pub difference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub model_id: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Layers where `pos − neg = difference + noise`; elsewhere the
    /// difference is pure zero-mean noise.
    pub signal_layers: Vec<usize>,
    pub concepts: Vec<PlantedConcept>,
    pub noise: f64,
    pub seed: u64,
}

pub fn axis(d: usize, i: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = scale;
    v
}

impl PlantedSpec {
    /// `pos − neg = 5·e₀ + N(0, 0.1²)` at `layer` only, 12 layers, d = 16,
    /// 32 samples in one category.
    pub fn single_direction(layer: usize, seed: u64) -> Self {
        let d = 16;
        Self {
            model_id: "planted".into(),
            num_layers: 12,
            hidden_dim: d,
            signal_layers: vec![layer],
            concepts: vec![PlantedConcept {
                category: "planted".into(),
                count: 32,
                neg_center: vec![0.0; d],
                difference: axis(d, 0, 5.0),
            }],
            noise: 0.1,
            seed,
        }
    }

    /// Two concepts in one category. Their differences share a small
    /// common component along e₀ and carry opposite large components along
    /// e₁, so the mean difference and the top principal component of the
    /// differences are orthogonal; their negative activations sit around
    /// orthogonal centers e₂ and e₃ (scaled).
    pub fn two_concepts(seed: u64) -> Self {
        let d = 16;
        let mut plus = axis(d, 0, 2.0);
        plus[1] = 5.0;
        let mut minus = axis(d, 0, 2.0);
        minus[1] = -5.0;
        Self {
            model_id: "planted-two".into(),
            num_layers: 4,
            hidden_dim: d,
            signal_layers: vec![2],
            concepts: vec![
                PlantedConcept {
                    category: "mixed".into(),
                    count: 24,
                    neg_center: axis(d, 2, 8.0),
                    difference: plus,
                },
                PlantedConcept {
                    category: "mixed".into(),
                    count: 24,
                    neg_center: axis(d, 3, 8.0),
                    difference: minus,
                },
            ],
            noise: 0.1,
            seed,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.concepts.iter().map(|c| c.count).sum()
    }

    /// Draws the set. Sample ids are `s000`, `s001`, ... in concept order.
    pub fn generate(&self) -> Result<ActivationSet, StoreError> {
        let (l, d) = (self.num_layers, self.hidden_dim);
        for c in &self.concepts {
            if c.neg_center.len() != d || c.difference.len() != d {
                return Err(StoreError::ShapeMismatch {
                    what: format!("planted concept `{}`", c.category),
                    expected: d.to_string(),
                    found: format!("center {}, difference {}", c.neg_center.len(), c.difference.len()),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise.max(0.0)).map_err(|e| StoreError::InvalidBundle(e.to_string()))?;
        let n = self.num_samples();
        let mut ids = Vec::with_capacity(n);
        let mut cats = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n * l * d);
        let mut neg = Vec::with_capacity(n * l * d);
        for c in &self.concepts {
            for _ in 0..c.count {
                ids.push(format!("s{:03}", ids.len()));
                cats.push(c.category.clone());
                for layer in 0..l {
                    let signal = self.signal_layers.contains(&layer);
                    for k in 0..d {
                        let base = c.neg_center[k] + noise.sample(&mut rng);
                        let shift = if signal { c.difference[k] } else { 0.0 };
                        neg.push(base as f32);
                        pos.push((base + shift + noise.sample(&mut rng)) as f32);
                    }
                }
            }
        }
        ActivationSet::new(self.model_id.clone(), l, d, ids, cats, pos, neg)
            .map(|a| a.with_issue("planted").with_extraction_mode("synthetic"))
    }
}

/// Text records to go with a generated set so it can be saved as a dataset.
/// The texts carry no meaning.
pub fn placeholder_samples(acts: &ActivationSet) -> Vec<SteerSample> {
    acts.sample_ids()
        .iter()
        .zip(acts.categories())
        .map(|(id, cat)| SteerSample {
            id: id.clone(),
            question: format!("planted sample {id}"),
            matching_behavior: "positive".into(),
            not_matching_behavior: "negative".into(),
            category: cat.clone(),
            scope: cat.clone(),
            source: "planted".into(),
        })
        .collect()
}
