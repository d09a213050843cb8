// SPDX-License-Identifier: MIT OR Apache-2.0

//! Inference-time steering: pick one strategy by anchor similarity, then add
//! `α·β·v` to the residual stream at the bundle's layer.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg;
use crate::store::StrategyBundle;

/// Failures raised by a model implementation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token {token} out of range (vocab = {vocab})")]
    InvalidToken { token: u32, vocab: usize },
    #[error("sequence length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptyInput,
    #[error("layer {layer} out of range (num_layers = {num_layers})")]
    LayerOutOfRange { layer: usize, num_layers: usize },
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("activation has zero norm; anchor similarity is undefined")]
    UndefinedActivation,
    #[error("invalid steer config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("bundle has no profiles")]
    EmptyBundle,
    #[error("decision names `{0}`, which is not in the bundle")]
    UnknownStrategy(String),
    #[error("bundle layer {layer} out of range for a model with {num_layers} layers")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("model `{0}` does not expose a layer-output hook")]
    HooksUnsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Hook contract: called once per (layer, position) right after the FFN
/// residual add, before the state reaches the next layer. Implementations
/// edit `h` in place.
pub trait LayerTransform: Sync {
    fn layer_output_transform(&self, layer: usize, position: usize, h: &mut [f32]);
}

impl<F: Fn(usize, usize, &mut [f32]) + Sync> LayerTransform for F {
    fn layer_output_transform(&self, layer: usize, position: usize, h: &mut [f32]) {
        self(layer, position, h)
    }
}

/// What the runtime needs from a model. Layer indices are 0-based decoder
/// layers; "layer output" is the residual stream after that layer's FFN add.
pub trait SteerableModel: Sync {
    fn model_id(&self) -> &str;
    fn num_layers(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn max_seq(&self) -> usize;

    fn supports_hooks(&self) -> bool {
        true
    }

    /// Layer output at the last position of `tokens`, unhooked.
    fn final_layer_state(&self, tokens: &[u32], layer: usize) -> Result<Vec<f32>, ModelError>;

    /// Logits for the token following `tokens`, with `hook` applied.
    fn next_token_logits(&self, tokens: &[u32], hook: Option<&dyn LayerTransform>) -> Result<Vec<f32>, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    /// Steer every position, prompt included.
    #[default]
    AllPositions,
    /// Steer from the final prompt token on (the position whose output
    /// produces the first generated token) through every generated token.
    GeneratedOnly,
}

impl FromStr for Positions {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "all_positions" | "all" => Ok(Self::AllPositions),
            "generated_only" | "generated" => Ok(Self::GeneratedOnly),
            _ => Err(RuntimeError::InvalidConfig(format!("unknown positions mode `{s}`"))),
        }
    }
}

impl fmt::Display for Positions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AllPositions => "all_positions",
            Self::GeneratedOnly => "generated_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteerConfig {
    pub beta: f64,
    /// Minimum anchor cosine needed to intervene. The default 0.0 steers
    /// whenever the best anchor is not anti-aligned; the build report
    /// suggests a calibrated value.
    pub match_threshold: f64,
    pub positions: Positions,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            match_threshold: 0.0,
            positions: Positions::AllPositions,
        }
    }
}

impl SteerConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if !self.beta.is_finite() {
            return Err(RuntimeError::InvalidConfig(format!(
                "beta must be finite, got {}",
                self.beta
            )));
        }
        if !(-1.0..=1.0).contains(&self.match_threshold) {
            return Err(RuntimeError::InvalidConfig(format!(
                "match threshold must lie in [-1, 1], got {}",
                self.match_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SteerDecision {
    pub chosen: Option<String>,
    /// Best anchor cosine, reported even when it missed the threshold.
    pub similarity: f64,
    pub applied_strength: f64,
    pub layer: usize,
}

/// Picks the profile whose anchor is most cosine-similar to `h` (ties to the
/// smaller algorithm id). Zero anchors score 0.
pub fn match_strategy(h: &[f64], bundle: &StrategyBundle, cfg: &SteerConfig) -> Result<SteerDecision, RuntimeError> {
    cfg.validate()?;
    if bundle.profiles.is_empty() {
        return Err(RuntimeError::EmptyBundle);
    }
    if h.len() != bundle.hidden_dim {
        return Err(RuntimeError::DimensionMismatch {
            expected: bundle.hidden_dim,
            found: h.len(),
        });
    }
    if linalg::norm(h) == 0.0 {
        return Err(RuntimeError::UndefinedActivation);
    }
    let mut best: Option<(&str, f64, f64)> = None;
    for p in &bundle.profiles {
        let c = linalg::cosine(h, &p.anchor).unwrap_or(0.0).clamp(-1.0, 1.0);
        let id = p.algorithm_id();
        let better = match best {
            None => true,
            Some((bid, bc, _)) => c > bc || (c == bc && id < bid),
        };
        if better {
            best = Some((id, c, p.strength));
        }
    }
    let (id, similarity, alpha) = best.expect("non-empty bundle");
    let hit = similarity >= cfg.match_threshold;
    Ok(SteerDecision {
        chosen: hit.then(|| id.to_string()),
        similarity,
        applied_strength: if hit { alpha * cfg.beta } else { 0.0 },
        layer: bundle.layer,
    })
}

/// The vector `applied_strength · v_chosen`, or `None` for a no-op decision.
pub fn steer_delta(decision: &SteerDecision, bundle: &StrategyBundle) -> Result<Option<Vec<f64>>, RuntimeError> {
    let Some(id) = &decision.chosen else {
        return Ok(None);
    };
    let p = bundle
        .profile(id)
        .ok_or_else(|| RuntimeError::UnknownStrategy(id.clone()))?;
    Ok(Some(
        p.steer.values.iter().map(|v| decision.applied_strength * v).collect(),
    ))
}

/// `h + α·β·v`; returns `h` unchanged when nothing was chosen.
pub fn apply_steer(h: &[f64], decision: &SteerDecision, bundle: &StrategyBundle) -> Result<Vec<f64>, RuntimeError> {
    if h.len() != bundle.hidden_dim {
        return Err(RuntimeError::DimensionMismatch {
            expected: bundle.hidden_dim,
            found: h.len(),
        });
    }
    Ok(match steer_delta(decision, bundle)? {
        None => h.to_vec(),
        Some(delta) => h.iter().zip(&delta).map(|(a, b)| a + b).collect(),
    })
}

/// A single-layer additive hook. The addition happens in f64 and is rounded
/// back to f32.
#[derive(Debug, Clone, PartialEq)]
pub struct SteerHook {
    pub layer: usize,
    pub delta: Vec<f64>,
    pub first_position: usize,
}

impl LayerTransform for SteerHook {
    fn layer_output_transform(&self, layer: usize, position: usize, h: &mut [f32]) {
        if layer != self.layer || position < self.first_position {
            return;
        }
        for (x, d) in h.iter_mut().zip(&self.delta) {
            *x = (f64::from(*x) + d) as f32;
        }
    }
}

impl SteerHook {
    pub fn new(
        decision: &SteerDecision,
        bundle: &StrategyBundle,
        positions: Positions,
        prompt_len: usize,
    ) -> Result<Option<Self>, RuntimeError> {
        let first_position = match positions {
            Positions::AllPositions => 0,
            Positions::GeneratedOnly => prompt_len.saturating_sub(1),
        };
        Ok(steer_delta(decision, bundle)?.map(|delta| Self {
            layer: bundle.layer,
            delta,
            first_position,
        }))
    }
}

fn check_compat(model: &dyn SteerableModel, bundle: &StrategyBundle) -> Result<(), RuntimeError> {
    if !model.supports_hooks() {
        return Err(RuntimeError::HooksUnsupported(model.model_id().to_string()));
    }
    if bundle.hidden_dim != model.hidden_dim() {
        return Err(RuntimeError::DimensionMismatch {
            expected: model.hidden_dim(),
            found: bundle.hidden_dim,
        });
    }
    if bundle.layer >= model.num_layers() {
        return Err(RuntimeError::LayerOutOfRange {
            layer: bundle.layer,
            num_layers: model.num_layers(),
        });
    }
    Ok(())
}

/// Matching pre-pass: the unhooked layer-`l*` state of the last prompt token
/// against the bundle's anchors.
pub fn decide(
    model: &dyn SteerableModel,
    prompt: &[u32],
    bundle: &StrategyBundle,
    cfg: &SteerConfig,
) -> Result<SteerDecision, RuntimeError> {
    check_compat(model, bundle)?;
    let h = model.final_layer_state(prompt, bundle.layer)?;
    match_strategy(&linalg::to_f64(&h), bundle, cfg)
}

/// Greedy argmax decoding (ties to the smallest token id). Stops early when
/// the sequence reaches the model's `max_seq`.
pub fn greedy_decode(
    model: &dyn SteerableModel,
    prompt: &[u32],
    max_new: usize,
    hook: Option<&dyn LayerTransform>,
) -> Result<Vec<u32>, ModelError> {
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(max_new);
    while out.len() < max_new && seq.len() < model.max_seq() {
        let logits = model.next_token_logits(&seq, hook)?;
        let next = argmax(&logits) as u32;
        seq.push(next);
        out.push(next);
    }
    Ok(out)
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteerOutput {
    pub tokens: Vec<u32>,
    pub decision: SteerDecision,
}

/// Matches once on the prompt, installs one hook at `l*` and decodes greedily.
pub fn steer_generate(
    model: &dyn SteerableModel,
    prompt: &[u32],
    bundle: &StrategyBundle,
    cfg: &SteerConfig,
    max_new: usize,
) -> Result<SteerOutput, RuntimeError> {
    let decision = decide(model, prompt, bundle, cfg)?;
    let hook = SteerHook::new(&decision, bundle, cfg.positions, prompt.len())?;
    let tokens = greedy_decode(model, prompt, max_new, hook.as_ref().map(|h| h as &dyn LayerTransform))?;
    Ok(SteerOutput { tokens, decision })
}
