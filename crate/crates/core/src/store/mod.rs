// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steer-sample corpora, paired activation tensors and strategy bundles,
//! plus their on-disk formats (see `docs/formats.md`).

mod bundle;
mod dataset;
pub(crate) mod manifest;

use std::path::PathBuf;

use thiserror::Error;

pub use bundle::{load_bundle, read_bundle, save_bundle, write_bundle, StrategyBundle, StrategyProfile};
pub use dataset::{
    load_corpus, load_dataset, save_corpus, save_dataset, split_by_category, ActivationSet, Corpus, SteerSample,
    TokenIndex,
};

pub const FORMAT_VERSION: usize = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("shape mismatch: {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt data in field `{field}`: {detail}")]
    Corrupt { field: String, detail: String },
    #[error(
        "invalid data: non-finite value in {tensor} at sample `{sample_id}` (row {row}), layer {layer}, dim {dim}"
    )]
    NonFinite {
        tensor: &'static str,
        sample_id: String,
        row: usize,
        layer: usize,
        dim: usize,
    },
    #[error("unsupported {kind} version `{found}` (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { kind: &'static str, found: String },
    #[error("invalid sample `{id}`: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
