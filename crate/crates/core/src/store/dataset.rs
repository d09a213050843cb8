// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{self, ManifestWriter, Section};
use super::{StoreError, FORMAT_VERSION};
use crate::algorithms::LayerActivations;
use crate::linalg::Matrix;

pub(crate) const MANIFEST_FILE: &str = "manifest";
pub(crate) const POS_FILE: &str = "pos.bin";
pub(crate) const NEG_FILE: &str = "neg.bin";

// ---------------------------------------------------------------------------
// SteerSample
// ---------------------------------------------------------------------------

/// One contrastive QA triple: a question, the desired completion and the
/// undesired completion, tagged with the category and scope it was written for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteerSample {
    pub id: String,
    pub question: String,
    pub matching_behavior: String,
    pub not_matching_behavior: String,
    pub category: String,
    pub scope: String,
    pub source: String,
}

impl SteerSample {
    /// Checks the per-sample invariants (non-degenerate contrast, non-empty
    /// id/question/category/scope).
    pub fn validate(&self) -> Result<(), StoreError> {
        let fail = |reason: &str| {
            Err(StoreError::InvalidSample {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty id");
        }
        if self.question.trim().is_empty() {
            return fail("empty question");
        }
        if self.category.trim().is_empty() {
            return fail("empty category");
        }
        if self.scope.trim().is_empty() {
            return fail("empty scope");
        }
        if self.matching_behavior == self.not_matching_behavior {
            return fail("matching_behavior equals not_matching_behavior");
        }
        Ok(())
    }
}

/// A validated list of samples plus the declared category and scope lists.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub issue: String,
    pub categories: Vec<String>,
    pub scopes: Vec<String>,
    pub samples: Vec<SteerSample>,
}

impl Corpus {
    /// Builds a corpus whose declared lists are the first-appearance order of
    /// the samples' categories and scopes.
    pub fn from_samples(issue: impl Into<String>, samples: Vec<SteerSample>) -> Result<Self, StoreError> {
        let corpus = Self {
            issue: issue.into(),
            categories: first_appearance(samples.iter().map(|s| s.category.as_str())),
            scopes: first_appearance(samples.iter().map(|s| s.scope.as_str())),
            samples,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        validate_samples(&self.samples, &self.categories, &self.scopes)
    }
}

fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    items.filter(|s| seen.insert(*s)).map(str::to_string).collect()
}

fn validate_samples(samples: &[SteerSample], categories: &[String], scopes: &[String]) -> Result<(), StoreError> {
    let mut ids = HashSet::new();
    for s in samples {
        s.validate()?;
        if !ids.insert(s.id.as_str()) {
            return Err(StoreError::InvalidSample {
                id: s.id.clone(),
                reason: "duplicate id".into(),
            });
        }
        if !categories.contains(&s.category) {
            return Err(StoreError::InvalidSample {
                id: s.id.clone(),
                reason: format!("category `{}` not in declared list", s.category),
            });
        }
        if !scopes.contains(&s.scope) {
            return Err(StoreError::InvalidSample {
                id: s.id.clone(),
                reason: format!("scope `{}` not in declared list", s.scope),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ActivationSet
// ---------------------------------------------------------------------------

/// Token positions (within the positive / negative sequences) whose hidden
/// states were stored. Purely informational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenIndex {
    pub pos: Option<usize>,
    pub neg: Option<usize>,
}

/// Paired final-token activations, `N × L × d` per side, stored row-major in
/// (sample, layer, dim) order. Immutable once constructed; every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    model_id: String,
    issue: String,
    extraction_mode: String,
    num_layers: usize,
    hidden_dim: usize,
    sample_ids: Vec<String>,
    categories: Vec<String>,
    category_order: Vec<String>,
    token_index: Vec<TokenIndex>,
    pos: Vec<f32>,
    neg: Vec<f32>,
}

impl ActivationSet {
    /// Validates shapes, finiteness, id uniqueness and category labels.
    /// The declared category order defaults to first appearance.
    pub fn new(
        model_id: impl Into<String>,
        num_layers: usize,
        hidden_dim: usize,
        sample_ids: Vec<String>,
        categories: Vec<String>,
        pos: Vec<f32>,
        neg: Vec<f32>,
    ) -> Result<Self, StoreError> {
        let n = sample_ids.len();
        if categories.len() != n {
            return Err(StoreError::ShapeMismatch {
                what: "category labels".into(),
                expected: format!("{n} (one per sample)"),
                found: categories.len().to_string(),
            });
        }
        let expected = n * num_layers * hidden_dim;
        for (name, t) in [("pos", &pos), ("neg", &neg)] {
            if t.len() != expected {
                return Err(StoreError::ShapeMismatch {
                    what: format!("{name} tensor length"),
                    expected: format!("{expected} (N={n}, L={num_layers}, d={hidden_dim})"),
                    found: t.len().to_string(),
                });
            }
        }
        if num_layers == 0 || hidden_dim == 0 {
            return Err(StoreError::ShapeMismatch {
                what: "activation dimensions".into(),
                expected: "L >= 1 and d >= 1".into(),
                found: format!("L={num_layers}, d={hidden_dim}"),
            });
        }
        let mut seen = HashSet::new();
        for (id, cat) in sample_ids.iter().zip(&categories) {
            if id.trim().is_empty() || !seen.insert(id.as_str()) {
                return Err(StoreError::InvalidSample {
                    id: id.clone(),
                    reason: "empty or duplicate sample id".into(),
                });
            }
            if cat.trim().is_empty() {
                return Err(StoreError::InvalidSample {
                    id: id.clone(),
                    reason: "empty category".into(),
                });
            }
        }
        let category_order = first_appearance(categories.iter().map(String::as_str));
        let set = Self {
            model_id: model_id.into(),
            issue: String::new(),
            extraction_mode: "unspecified".into(),
            num_layers,
            hidden_dim,
            token_index: vec![TokenIndex::default(); n],
            sample_ids,
            categories,
            category_order,
            pos,
            neg,
        };
        set.check_finite()?;
        Ok(set)
    }

    /// Overrides the declared category order. Must list every used category
    /// exactly once; unused declared categories are allowed.
    pub fn with_category_order(mut self, order: Vec<String>) -> Result<Self, StoreError> {
        let unique: HashSet<_> = order.iter().collect();
        if unique.len() != order.len() {
            return Err(StoreError::Corrupt {
                field: "categories".into(),
                detail: "duplicate category in declared order".into(),
            });
        }
        if let Some(missing) = self.categories.iter().find(|c| !unique.contains(c)) {
            return Err(StoreError::Corrupt {
                field: "categories".into(),
                detail: format!("category `{missing}` is used but not declared"),
            });
        }
        self.category_order = order;
        Ok(self)
    }

    pub fn with_issue(mut self, issue: impl Into<String>) -> Self {
        self.issue = issue.into();
        self
    }

    pub fn with_extraction_mode(mut self, mode: impl Into<String>) -> Self {
        self.extraction_mode = mode.into();
        self
    }

    pub fn with_token_index(mut self, index: Vec<TokenIndex>) -> Result<Self, StoreError> {
        if index.len() != self.num_samples() {
            return Err(StoreError::ShapeMismatch {
                what: "token index".into(),
                expected: self.num_samples().to_string(),
                found: index.len().to_string(),
            });
        }
        self.token_index = index;
        Ok(self)
    }

    fn check_finite(&self) -> Result<(), StoreError> {
        for (tensor, data) in [("pos", &self.pos), ("neg", &self.neg)] {
            if let Some(flat) = data.iter().position(|x| !x.is_finite()) {
                let row = flat / (self.num_layers * self.hidden_dim);
                let rem = flat % (self.num_layers * self.hidden_dim);
                return Err(StoreError::NonFinite {
                    tensor,
                    sample_id: self.sample_ids[row].clone(),
                    row,
                    layer: rem / self.hidden_dim,
                    dim: rem % self.hidden_dim,
                });
            }
        }
        Ok(())
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn issue(&self) -> &str {
        &self.issue
    }

    pub fn extraction_mode(&self) -> &str {
        &self.extraction_mode
    }

    pub fn num_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn category_order(&self) -> &[String] {
        &self.category_order
    }

    pub fn token_index(&self) -> &[TokenIndex] {
        &self.token_index
    }

    pub fn pos_data(&self) -> &[f32] {
        &self.pos
    }

    pub fn neg_data(&self) -> &[f32] {
        &self.neg
    }

    fn offset(&self, row: usize, layer: usize) -> usize {
        assert!(
            row < self.num_samples() && layer < self.num_layers,
            "index out of range"
        );
        (row * self.num_layers + layer) * self.hidden_dim
    }

    pub fn pos_row(&self, row: usize, layer: usize) -> &[f32] {
        let o = self.offset(row, layer);
        &self.pos[o..o + self.hidden_dim]
    }

    pub fn neg_row(&self, row: usize, layer: usize) -> &[f32] {
        let o = self.offset(row, layer);
        &self.neg[o..o + self.hidden_dim]
    }

    fn layer_matrix(&self, layer: usize, rows: &[usize], positive: bool) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.hidden_dim);
        for &r in rows {
            let src = if positive {
                self.pos_row(r, layer)
            } else {
                self.neg_row(r, layer)
            };
            data.extend(src.iter().map(|&x| f64::from(x)));
        }
        Matrix::from_vec(rows.len(), self.hidden_dim, data)
    }

    /// One layer's paired slice over all samples, widened to `f64`.
    pub fn layer(&self, layer: usize) -> LayerActivations {
        let rows: Vec<usize> = (0..self.num_samples()).collect();
        self.layer_rows(layer, &rows)
    }

    /// One layer's paired slice over the given rows, in the given order.
    pub fn layer_rows(&self, layer: usize, rows: &[usize]) -> LayerActivations {
        LayerActivations::new_unchecked(
            self.layer_matrix(layer, rows, true),
            self.layer_matrix(layer, rows, false),
        )
    }

    /// Row indices per declared category (declared order; categories without
    /// samples are omitted).
    pub fn category_rows(&self) -> Vec<(String, Vec<usize>)> {
        self.category_order
            .iter()
            .filter_map(|c| {
                let rows: Vec<usize> = (0..self.num_samples()).filter(|&i| &self.categories[i] == c).collect();
                (!rows.is_empty()).then(|| (c.clone(), rows))
            })
            .collect()
    }

    /// Sub-set over `rows`, preserving their order and all metadata.
    pub fn select_rows(&self, rows: &[usize]) -> ActivationSet {
        let stride = self.num_layers * self.hidden_dim;
        let gather = |t: &[f32]| {
            rows.iter()
                .flat_map(|&r| t[r * stride..(r + 1) * stride].iter().copied())
                .collect::<Vec<f32>>()
        };
        Self {
            model_id: self.model_id.clone(),
            issue: self.issue.clone(),
            extraction_mode: self.extraction_mode.clone(),
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
            categories: rows.iter().map(|&r| self.categories[r].clone()).collect(),
            category_order: self.category_order.clone(),
            token_index: rows.iter().map(|&r| self.token_index[r]).collect(),
            pos: gather(&self.pos),
            neg: gather(&self.neg),
        }
    }
}

/// Partitions the set by category label, in declared category order. Rows
/// keep their original relative order inside each part.
pub fn split_by_category(acts: &ActivationSet) -> Vec<(String, ActivationSet)> {
    acts.category_rows()
        .into_iter()
        .map(|(c, rows)| {
            let part = acts.select_rows(&rows);
            (c, part)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

fn f32_to_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn le_bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn write_sample_record(w: &mut ManifestWriter, s: &SteerSample, token: Option<TokenIndex>) {
    w.section("sample")
        .json("id", &s.id)
        .json("category", &s.category)
        .json("scope", &s.scope)
        .json("question", &s.question)
        .json("matching-behavior", &s.matching_behavior)
        .json("not-matching-behavior", &s.not_matching_behavior)
        .json("source", &s.source);
    if let Some(t) = token {
        if let Some(p) = t.pos {
            w.raw("final-token-pos", p);
        }
        if let Some(n) = t.neg {
            w.raw("final-token-neg", n);
        }
    }
}

fn read_sample_record(sec: &Section) -> Result<(SteerSample, TokenIndex), StoreError> {
    let sample = SteerSample {
        id: sec.json("id")?,
        category: sec.json("category")?,
        scope: sec.json("scope")?,
        question: sec.json("question")?,
        matching_behavior: sec.json("matching-behavior")?,
        not_matching_behavior: sec.json("not-matching-behavior")?,
        source: sec.json("source")?,
    };
    let token = TokenIndex {
        pos: sec.opt_usize("final-token-pos")?,
        neg: sec.opt_usize("final-token-neg")?,
    };
    Ok((sample, token))
}

fn check_header(sections: &[Section], kind: &'static str) -> Result<(), StoreError> {
    let header = &sections[0];
    let version = header.require("format-version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(StoreError::UnsupportedVersion {
            kind,
            found: version.to_string(),
        });
    }
    let found: String = header.json("kind")?;
    if found != kind {
        return Err(StoreError::Corrupt {
            field: "kind".into(),
            detail: format!("expected `{kind}`, found `{found}`"),
        });
    }
    Ok(())
}

fn sample_sections(sections: &[Section]) -> Result<Vec<&Section>, StoreError> {
    sections[1..]
        .iter()
        .map(|s| match s.name.as_deref() {
            Some("sample") => Ok(s),
            other => Err(StoreError::Corrupt {
                field: format!("section at line {}", s.line),
                detail: format!("unknown section `{}`", other.unwrap_or("")),
            }),
        })
        .collect()
}

/// Writes `manifest`, `pos.bin` and `neg.bin` into `dir` (created if needed).
pub fn save_dataset(samples: &[SteerSample], acts: &ActivationSet, dir: &Path) -> Result<(), StoreError> {
    if samples.len() != acts.num_samples() {
        return Err(StoreError::ShapeMismatch {
            what: "samples vs activations".into(),
            expected: format!(
                "N={} (activations: N={}, L={}, d={})",
                acts.num_samples(),
                acts.num_samples(),
                acts.num_layers(),
                acts.hidden_dim()
            ),
            found: format!("{} samples", samples.len()),
        });
    }
    for (i, s) in samples.iter().enumerate() {
        if s.id != acts.sample_ids()[i] || s.category != acts.categories()[i] {
            return Err(StoreError::ShapeMismatch {
                what: format!("sample order at row {i}"),
                expected: format!("id `{}` / category `{}`", acts.sample_ids()[i], acts.categories()[i]),
                found: format!("id `{}` / category `{}`", s.id, s.category),
            });
        }
    }
    let scopes = first_appearance(samples.iter().map(|s| s.scope.as_str()));
    validate_samples(samples, acts.category_order(), &scopes)?;

    let pos = f32_to_le_bytes(acts.pos_data());
    let neg = f32_to_le_bytes(acts.neg_data());
    let mut w = ManifestWriter::new();
    w.raw("format-version", FORMAT_VERSION)
        .json("kind", "dataset")
        .json("model-id", acts.model_id())
        .json("issue", acts.issue())
        .json("extraction-mode", acts.extraction_mode())
        .raw("num-layers", acts.num_layers())
        .raw("hidden-dim", acts.hidden_dim())
        .raw("num-samples", acts.num_samples())
        .json("categories", acts.category_order())
        .json("scopes", &scopes)
        .raw("pos-crc32", manifest::crc32_hex(&pos))
        .raw("neg-crc32", manifest::crc32_hex(&neg));
    for (s, t) in samples.iter().zip(acts.token_index()) {
        write_sample_record(&mut w, s, Some(*t));
    }

    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
    for (name, bytes) in [
        (MANIFEST_FILE, w.finish().into_bytes()),
        (POS_FILE, pos),
        (NEG_FILE, neg),
    ] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| StoreError::io(path, e))?;
    }
    Ok(())
}

/// Reads and fully validates a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Vec<SteerSample>, ActivationSet), StoreError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| StoreError::io(manifest_path, e))?;
    let sections = manifest::parse(&text)?;
    check_header(&sections, "dataset")?;
    let h = &sections[0];
    let num_layers = h.usize("num-layers")?;
    let hidden_dim = h.usize("hidden-dim")?;
    let n = h.usize("num-samples")?;
    let categories: Vec<String> = h.json("categories")?;
    let scopes: Vec<String> = h.json("scopes")?;

    let records = sample_sections(&sections)?;
    if records.len() != n {
        return Err(StoreError::Corrupt {
            field: "num-samples".into(),
            detail: format!("declares {n} samples but manifest has {} sample records", records.len()),
        });
    }
    let mut samples = Vec::with_capacity(n);
    let mut tokens = Vec::with_capacity(n);
    for r in records {
        let (s, t) = read_sample_record(r)?;
        samples.push(s);
        tokens.push(t);
    }
    validate_samples(&samples, &categories, &scopes)?;

    let expected_bytes = n * num_layers * hidden_dim * 4;
    let mut tensors = Vec::with_capacity(2);
    for (file, crc_key) in [(POS_FILE, "pos-crc32"), (NEG_FILE, "neg-crc32")] {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| StoreError::io(&path, e))?;
        if bytes.len() != expected_bytes {
            return Err(StoreError::Corrupt {
                field: file.to_string(),
                detail: format!(
                    "payload is {} bytes but num-samples={n} × num-layers={num_layers} × hidden-dim={hidden_dim} × 4 = {expected_bytes}",
                    bytes.len()
                ),
            });
        }
        let declared = h.crc32(crc_key)?;
        let actual = crc32fast::hash(&bytes);
        if declared != actual {
            return Err(StoreError::Corrupt {
                field: crc_key.to_string(),
                detail: format!("checksum mismatch: manifest {declared:08x}, payload {actual:08x}"),
            });
        }
        tensors.push(le_bytes_to_f32(&bytes));
    }
    let neg = tensors.pop().expect("two tensors");
    let pos = tensors.pop().expect("two tensors");

    let acts = ActivationSet::new(
        h.json::<String>("model-id")?,
        num_layers,
        hidden_dim,
        samples.iter().map(|s| s.id.clone()).collect(),
        samples.iter().map(|s| s.category.clone()).collect(),
        pos,
        neg,
    )?
    .with_category_order(categories)?
    .with_issue(h.json::<String>("issue")?)
    .with_extraction_mode(h.json::<String>("extraction-mode")?)
    .with_token_index(tokens)?;
    Ok((samples, acts))
}

/// Writes a sample-only corpus file using the dataset manifest's record format.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), StoreError> {
    fs::write(path, corpus_to_string(corpus)?).map_err(|e| StoreError::io(path, e))
}

pub(crate) fn corpus_to_string(corpus: &Corpus) -> Result<String, StoreError> {
    corpus.validate()?;
    let mut w = ManifestWriter::new();
    w.raw("format-version", FORMAT_VERSION)
        .json("kind", "corpus")
        .json("issue", &corpus.issue)
        .raw("num-samples", corpus.samples.len())
        .json("categories", &corpus.categories)
        .json("scopes", &corpus.scopes);
    for s in &corpus.samples {
        write_sample_record(&mut w, s, None);
    }
    Ok(w.finish())
}

pub fn load_corpus(path: &Path) -> Result<Corpus, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    let sections = manifest::parse(&text)?;
    check_header(&sections, "corpus")?;
    let h = &sections[0];
    let n = h.usize("num-samples")?;
    let records = sample_sections(&sections)?;
    if records.len() != n {
        return Err(StoreError::Corrupt {
            field: "num-samples".into(),
            detail: format!("declares {n} samples but file has {} sample records", records.len()),
        });
    }
    let samples = records
        .into_iter()
        .map(|r| read_sample_record(r).map(|(s, _)| s))
        .collect::<Result<Vec<_>, _>>()?;
    let corpus = Corpus {
        issue: h.json("issue")?,
        categories: h.json("categories")?,
        scopes: h.json("scopes")?,
        samples,
    };
    corpus.validate()?;
    Ok(corpus)
}
