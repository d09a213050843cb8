// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-option (A/B) accuracy and the strength / layer sweeps built on it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::AlgorithmRegistry;
use crate::builder::{build_bundle_at_layer, select_layer, BuildError};
use crate::runtime::{self, LayerTransform, RuntimeError, SteerConfig, SteerHook, SteerableModel};
use crate::store::{ActivationSet, SteerSample, StrategyBundle};
use crate::toy::ByteCodec;

/// Prompt used to score an item; the model's next token after it is read as
/// the answer letter.
pub const AB_TEMPLATE: &str = include_str!("../prompts/ab_choice.txt");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no items to evaluate; accuracy is undefined")]
    EmptyItems,
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("invalid item {index}: {reason}")]
    InvalidItem { index: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn letter(self) -> &'static str {
        match self {
            Choice::A => "A",
            Choice::B => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ABItem {
    pub question: String,
    pub option_a: String,
    pub option_b: String,
    pub correct: Choice,
}

impl ABItem {
    pub fn validate(&self, index: usize) -> Result<(), EvalError> {
        if self.option_a == self.option_b {
            return Err(EvalError::InvalidItem {
                index,
                reason: "options are identical".into(),
            });
        }
        Ok(())
    }

    pub fn prompt(&self) -> String {
        AB_TEMPLATE
            .trim_end_matches('\n')
            .replace("{question}", &self.question)
            .replace("{option_a}", &self.option_a)
            .replace("{option_b}", &self.option_b)
    }
}

/// Turns each sample into an item whose correct option is the matching
/// behavior. A seeded shuffle of the sample indices is walked with
/// alternating A/B, so ⌈N/2⌉ items get A.
pub fn normalize_ab(samples: &[SteerSample], seed: u64) -> Vec<ABItem> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slot = vec![Choice::A; samples.len()];
    for (k, &i) in order.iter().enumerate() {
        slot[i] = if k % 2 == 0 { Choice::A } else { Choice::B };
    }
    samples
        .iter()
        .zip(slot)
        .map(|(s, correct)| {
            let (a, b) = match correct {
                Choice::A => (&s.matching_behavior, &s.not_matching_behavior),
                Choice::B => (&s.not_matching_behavior, &s.matching_behavior),
            };
            ABItem {
                question: s.question.clone(),
                option_a: a.clone(),
                option_b: b.clone(),
                correct,
            }
        })
        .collect()
}

pub fn read_ab_items(path: &Path) -> Result<Vec<ABItem>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ABItem = serde_json::from_str(line).map_err(|source| EvalError::Parse { line: i + 1, source })?;
        item.validate(items.len())?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_ab_items(items: &[ABItem], path: &Path) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = fs::File::create(path).map_err(io)?;
    for item in items {
        let line = serde_json::to_string(item).expect("items serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

/// Text → token ids for the model under evaluation.
pub trait Tokenizer: Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
}

impl Tokenizer for ByteCodec {
    fn encode(&self, text: &str) -> Vec<u32> {
        ByteCodec::encode(self, text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemRecord {
    pub index: usize,
    pub correct: Choice,
    pub score_a: f64,
    pub score_b: f64,
    pub is_correct: bool,
    pub chosen_strategy: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n: usize,
    pub records: Vec<ItemRecord>,
    /// Chosen strategy per item; `none` for no intervention, `error` for
    /// items that failed to score.
    pub histogram: BTreeMap<String, usize>,
}

fn log_softmax_at(logits: &[f32], token: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
    let total = logits.iter().fold(0.0, |a, &b| a + (f64::from(b) - max).exp());
    f64::from(logits[token]) - max - total.ln()
}

fn score_item(
    model: &dyn SteerableModel,
    tok: &dyn Tokenizer,
    item: &ABItem,
    bundle: Option<&StrategyBundle>,
    cfg: &SteerConfig,
) -> Result<(f64, f64, Option<String>), String> {
    let prompt = tok.encode(&item.prompt());
    let (a, b) = match (tok.encode("A").first(), tok.encode("B").first()) {
        (Some(&a), Some(&b)) => (a as usize, b as usize),
        _ => return Err("answer letters encode to no tokens".into()),
    };
    let mut chosen = None;
    let hook = match bundle {
        None => None,
        Some(bundle) => {
            let decision = runtime::decide(model, &prompt, bundle, cfg).map_err(|e| e.to_string())?;
            chosen = decision.chosen.clone();
            SteerHook::new(&decision, bundle, cfg.positions, prompt.len()).map_err(|e| e.to_string())?
        }
    };
    let logits = model
        .next_token_logits(&prompt, hook.as_ref().map(|h| h as &dyn LayerTransform))
        .map_err(|e| e.to_string())?;
    if a >= logits.len() || b >= logits.len() {
        return Err("answer token outside the vocabulary".into());
    }
    Ok((log_softmax_at(&logits, a), log_softmax_at(&logits, b), chosen))
}

/// Accuracy of `model` (optionally steered by `bundle`) on `items`. An item is
/// correct when the correct letter's log-probability is strictly higher.
/// Scoring failures count as incorrect and carry a note.
pub fn evaluate_accuracy(
    model: &dyn SteerableModel,
    tok: &dyn Tokenizer,
    items: &[ABItem],
    bundle: Option<&StrategyBundle>,
    cfg: &SteerConfig,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyItems);
    }
    cfg.validate()?;
    let records: Vec<ItemRecord> = items
        .par_iter()
        .enumerate()
        .map(|(index, item)| match score_item(model, tok, item, bundle, cfg) {
            Ok((score_a, score_b, chosen_strategy)) => {
                let is_correct = match item.correct {
                    Choice::A => score_a > score_b,
                    Choice::B => score_b > score_a,
                };
                ItemRecord {
                    index,
                    correct: item.correct,
                    score_a,
                    score_b,
                    is_correct,
                    chosen_strategy,
                    error: None,
                }
            }
            Err(note) => ItemRecord {
                index,
                correct: item.correct,
                score_a: f64::NAN,
                score_b: f64::NAN,
                is_correct: false,
                chosen_strategy: None,
                error: Some(note),
            },
        })
        .collect();
    let mut histogram = BTreeMap::new();
    for r in &records {
        let key = match (&r.error, &r.chosen_strategy) {
            (Some(_), _) => "error".to_string(),
            (None, Some(s)) => s.clone(),
            (None, None) => "none".to_string(),
        };
        *histogram.entry(key).or_insert(0) += 1;
    }
    let hits = records.iter().filter(|r| r.is_correct).count();
    Ok(EvalReport {
        accuracy: hits as f64 / records.len() as f64,
        n: records.len(),
        records,
        histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Layer,
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrengthMode {
    /// Every profile's α is replaced by the grid value; β is 1.
    FixedAlpha,
    /// Profiles keep their α; β takes the grid value.
    BetaScale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub setting: f64,
    /// `None` when the point could not be evaluated.
    pub accuracy: Option<f64>,
    pub n: usize,
    pub histogram: BTreeMap<String, usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    /// For layer sweeps: the layer that weak-ratio selection would pick.
    pub selected_layer: Option<usize>,
}

fn check_grid(grid: &[f64]) -> Result<(), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::InvalidGrid("grid is empty".into()));
    }
    if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
        return Err(EvalError::InvalidGrid(format!("non-finite value {v}")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::InvalidGrid("values must be strictly increasing".into()));
    }
    Ok(())
}

fn point(setting: f64, report: EvalReport) -> SweepPoint {
    SweepPoint {
        setting,
        accuracy: Some(report.accuracy),
        n: report.n,
        histogram: report.histogram,
        note: None,
    }
}

pub fn sweep_strength(
    model: &dyn SteerableModel,
    tok: &dyn Tokenizer,
    items: &[ABItem],
    bundle: &StrategyBundle,
    mode: StrengthMode,
    grid: &[f64],
    cfg: &SteerConfig,
) -> Result<SweepResult, EvalError> {
    check_grid(grid)?;
    let mut points = Vec::with_capacity(grid.len());
    for &g in grid {
        let report = match mode {
            StrengthMode::BetaScale => {
                let cfg = SteerConfig { beta: g, ..*cfg };
                evaluate_accuracy(model, tok, items, Some(bundle), &cfg)?
            }
            StrengthMode::FixedAlpha => {
                let mut fixed = bundle.clone();
                for p in &mut fixed.profiles {
                    p.strength = g;
                }
                let cfg = SteerConfig { beta: 1.0, ..*cfg };
                evaluate_accuracy(model, tok, items, Some(&fixed), &cfg)?
            }
        };
        points.push(point(g, report));
    }
    Ok(SweepResult {
        axis: match mode {
            StrengthMode::FixedAlpha => SweepAxis::Alpha,
            StrengthMode::BetaScale => SweepAxis::Beta,
        },
        points,
        selected_layer: None,
    })
}

/// Rebuilds profiles at each forced layer and evaluates them. Layers where
/// construction fails become unavailable points.
#[allow(clippy::too_many_arguments)]
pub fn sweep_layers(
    model: &dyn SteerableModel,
    tok: &dyn Tokenizer,
    items: &[ABItem],
    acts: &ActivationSet,
    registry: &AlgorithmRegistry,
    tau: f64,
    layers: &[usize],
    cfg: &SteerConfig,
) -> Result<SweepResult, EvalError> {
    let as_f64: Vec<f64> = layers.iter().map(|&l| l as f64).collect();
    check_grid(&as_f64)?;
    if let Some(&l) = layers
        .iter()
        .find(|&&l| l >= acts.num_layers() || l >= model.num_layers())
    {
        return Err(BuildError::LayerOutOfRange {
            layer: l,
            num_layers: acts.num_layers().min(model.num_layers()),
        }
        .into());
    }
    if items.is_empty() {
        return Err(EvalError::EmptyItems);
    }
    let selected_layer = match select_layer(acts, registry, tau) {
        Ok(sel) => Some(sel.layer),
        Err(BuildError::NoViableLayer) => None,
        Err(e) => return Err(e.into()),
    };
    let mut points = Vec::with_capacity(layers.len());
    for &layer in layers {
        let p = match build_bundle_at_layer(acts, registry, tau, layer) {
            Ok(out) => point(
                layer as f64,
                evaluate_accuracy(model, tok, items, Some(&out.bundle), cfg)?,
            ),
            Err(e) => SweepPoint {
                setting: layer as f64,
                accuracy: None,
                n: items.len(),
                histogram: BTreeMap::new(),
                note: Some(e.to_string()),
            },
        };
        points.push(p);
    }
    Ok(SweepResult {
        axis: SweepAxis::Layer,
        points,
        selected_layer,
    })
}

fn histogram_cell(h: &BTreeMap<String, usize>) -> String {
    h.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";")
}

/// `setting,accuracy,n,chosen_strategy_histogram`; unavailable points print
/// `NA`. Histograms are `id:count` pairs joined by `;`.
pub fn sweep_csv(result: &SweepResult) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting", "accuracy", "n", "chosen_strategy_histogram"])?;
    for p in &result.points {
        let acc = p.accuracy.map_or_else(|| "NA".to_string(), |a| format!("{a:.6}"));
        w.write_record([
            p.setting.to_string(),
            acc,
            p.n.to_string(),
            histogram_cell(&p.histogram),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
