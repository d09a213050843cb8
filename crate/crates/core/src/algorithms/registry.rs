// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::sync::Arc;

use super::{kmeans_vector, lr_vector, md_vector, pca_vector};
use super::{ExtractError, LayerActivations, SteerVector, DEGENERACY_THRESHOLD};
use crate::linalg;

/// An extraction routine. Output need not be normalized; the registry
/// normalizes and rejects near-zero directions.
pub type Extractor = Arc<dyn Fn(&LayerActivations) -> Result<Vec<f64>, ExtractError> + Send + Sync>;

pub const BUILTIN_ALGORITHMS: [&str; 4] = ["md", "lr", "pca", "kmeans"];

/// Insertion-ordered library of extractors keyed by lowercase id.
#[derive(Clone)]
pub struct AlgorithmRegistry {
    entries: Vec<(String, Extractor)>,
}

impl fmt::Debug for AlgorithmRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlgorithmRegistry").field("ids", &self.list()).finish()
    }
}

impl Default for AlgorithmRegistry {
    fn default() -> Self {
        let builtins: [Extractor; 4] = [
            Arc::new(md_vector),
            Arc::new(lr_vector),
            Arc::new(pca_vector),
            Arc::new(kmeans_vector),
        ];
        Self {
            entries: BUILTIN_ALGORITHMS.iter().map(|s| s.to_string()).zip(builtins).collect(),
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

impl AlgorithmRegistry {
    /// Registry holding the four built-ins.
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry restricted to `ids` (in the given order). Unknown ids fail.
    pub fn subset(&self, ids: &[&str]) -> Result<Self, ExtractError> {
        let entries = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .map(|f| (id.to_string(), f.clone()))
                    .ok_or_else(|| ExtractError::UnknownAlgorithm(id.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }

    pub fn register<F>(&mut self, id: &str, extractor: F) -> Result<(), ExtractError>
    where
        F: Fn(&LayerActivations) -> Result<Vec<f64>, ExtractError> + Send + Sync + 'static,
    {
        if !valid_id(id) {
            return Err(ExtractError::InvalidId(id.to_string()));
        }
        if self.get(id).is_some() {
            return Err(ExtractError::DuplicateAlgorithm(id.to_string()));
        }
        self.entries.push((id.to_string(), Arc::new(extractor)));
        Ok(())
    }

    pub fn list(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Extractor> {
        self.entries.iter().find(|(k, _)| k == id).map(|(_, f)| f)
    }

    /// Runs extractor `id` on one layer's activations and returns the unit
    /// steer vector tagged with `layer`.
    pub fn extract(&self, id: &str, acts: &LayerActivations, layer: usize) -> Result<SteerVector, ExtractError> {
        let f = self
            .get(id)
            .ok_or_else(|| ExtractError::UnknownAlgorithm(id.to_string()))?;
        let raw = f(acts)?;
        if raw.len() != acts.dim() {
            return Err(ExtractError::invalid(
                id,
                format!("extractor returned length {}, expected {}", raw.len(), acts.dim()),
            ));
        }
        let values = linalg::normalized(&raw, DEGENERACY_THRESHOLD)
            .ok_or_else(|| ExtractError::degenerate(id, "extractor returned a zero or non-finite direction"))?;
        Ok(SteerVector {
            algorithm_id: id.to_string(),
            layer,
            values,
        })
    }
}
