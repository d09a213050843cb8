// SPDX-License-Identifier: MIT OR Apache-2.0

//! A tiny deterministic pre-LayerNorm decoder-only transformer.
//!
//! Each layer computes
//!
//! ```text
//! a = h + MHA(LN₁(h))
//! h' = a + FFN(LN₂(a))      then the optional hook edits h'
//! ```
//!
//! followed by a final LayerNorm and an unembedding with bias. All arithmetic
//! is f32 with sums accumulated left to right.
//!
//! Weights come from a SplitMix64 stream seeded by `ToyConfig::seed`; each
//! draw `x` becomes `((x >> 11) / 2⁵³) · 0.2 − 0.1`. Parameters are filled in
//! this order: token embedding, position embedding, then per layer
//! `ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2`,
//! then `lnf_gain, lnf_bias, unembed, lm_bias`. LayerNorm gains are stored as
//! `1 + draw`. Matrices are row-major `[in][out]`.

use rand::SeedableRng;
use rand_core::RngCore;
use rand_xoshiro::SplitMix64;
use sha2::{Digest, Sha256};

use crate::runtime::{self, LayerTransform, ModelError, SteerableModel};
use crate::store::{ActivationSet, SteerSample, StoreError, TokenIndex};

/// Keeps the normalized output at unit variance to well under 1e-5 even for
/// tiny-variance inputs.
pub const LN_EPS: f32 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ToyConfig {
    pub vocab: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab: 64,
            d_model: 32,
            layers: 8,
            heads: 4,
            max_seq: 64,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("vocab", self.vocab),
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLayer {
    pub ln1_gain: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ln2_gain: Vec<f32>,
    pub ln2_bias: Vec<f32>,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

/// Weights are public so tests can rig specific behaviors.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyConfig,
    pub model_id: String,
    pub token_embedding: Vec<f32>,
    pub position_embedding: Vec<f32>,
    pub layers: Vec<ToyLayer>,
    pub lnf_gain: Vec<f32>,
    pub lnf_bias: Vec<f32>,
    pub unembed: Vec<f32>,
    pub lm_bias: Vec<f32>,
}

struct WeightStream(SplitMix64);

impl WeightStream {
    fn draw(&mut self) -> f32 {
        let unit = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        (unit * 0.2 - 0.1) as f32
    }

    fn fill(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| self.draw()).collect()
    }

    fn gain(&mut self, n: usize) -> Vec<f32> {
        (0..n).map(|_| 1.0 + self.draw()).collect()
    }
}

/// Everything one forward pass computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub seq_len: usize,
    pub d_model: usize,
    pub vocab: usize,
    /// `(L+1) × T × d`: embeddings, then each layer's output (after hooks).
    pub hidden: Vec<f32>,
    /// `L × T × d`: the post-attention residual `a` of each layer.
    pub attn_residual: Vec<f32>,
    /// `L × T × d`: the FFN branch output of each layer.
    pub ffn_out: Vec<f32>,
    /// `T × vocab`.
    pub logits: Vec<f32>,
}

impl ForwardTrace {
    /// `index` 0 is the embedding; `index = l + 1` is layer `l`'s output.
    pub fn hidden(&self, index: usize, position: usize) -> &[f32] {
        let at = (index * self.seq_len + position) * self.d_model;
        &self.hidden[at..at + self.d_model]
    }

    pub fn layer_output(&self, layer: usize, position: usize) -> &[f32] {
        self.hidden(layer + 1, position)
    }

    pub fn attn_residual(&self, layer: usize, position: usize) -> &[f32] {
        let at = (layer * self.seq_len + position) * self.d_model;
        &self.attn_residual[at..at + self.d_model]
    }

    pub fn ffn_out(&self, layer: usize, position: usize) -> &[f32] {
        let at = (layer * self.seq_len + position) * self.d_model;
        &self.ffn_out[at..at + self.d_model]
    }

    pub fn logits(&self, position: usize) -> &[f32] {
        &self.logits[position * self.vocab..(position + 1) * self.vocab]
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden.len() / (self.seq_len * self.d_model)
    }
}

/// `(x − mean) / sqrt(var + eps)` without the affine part.
pub fn normalize(x: &[f32]) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().fold(0.0f32, |a, v| a + v) / n;
    let var = x.iter().fold(0.0f32, |a, v| a + (v - mean) * (v - mean)) / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn layer_norm(x: &[f32], gain: &[f32], bias: &[f32]) -> Vec<f32> {
    normalize(x)
        .iter()
        .zip(gain)
        .zip(bias)
        .map(|((v, g), b)| v * g + b)
        .collect()
}

/// `y = x · W (+ b)` with `W` row-major `[in][out]`.
fn matvec(x: &[f32], w: &[f32], out: usize, bias: Option<&[f32]>) -> Vec<f32> {
    let mut y = match bias {
        Some(b) => b.to_vec(),
        None => vec![0.0; out],
    };
    for (i, xi) in x.iter().enumerate() {
        let row = &w[i * out..(i + 1) * out];
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    y
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

impl ToyModel {
    pub fn new(config: ToyConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let ToyConfig {
            vocab,
            d_model: d,
            layers,
            max_seq,
            seed,
            ..
        } = config;
        let ff = 4 * d;
        let mut s = WeightStream(SplitMix64::seed_from_u64(seed));
        let token_embedding = s.fill(vocab * d);
        let position_embedding = s.fill(max_seq * d);
        let layers = (0..layers)
            .map(|_| ToyLayer {
                ln1_gain: s.gain(d),
                ln1_bias: s.fill(d),
                wq: s.fill(d * d),
                wk: s.fill(d * d),
                wv: s.fill(d * d),
                wo: s.fill(d * d),
                ln2_gain: s.gain(d),
                ln2_bias: s.fill(d),
                w1: s.fill(d * ff),
                b1: s.fill(ff),
                w2: s.fill(ff * d),
                b2: s.fill(d),
            })
            .collect();
        Ok(Self {
            model_id: format!("toy-v{vocab}-d{d}-l{}-h{}-s{seed}", config.layers, config.heads),
            config,
            token_embedding,
            position_embedding,
            layers,
            lnf_gain: s.gain(d),
            lnf_bias: s.fill(d),
            unembed: s.fill(d * vocab),
            lm_bias: s.fill(vocab),
        })
    }

    /// All parameters in fill order, as little-endian bytes.
    pub fn weight_bytes(&self) -> Vec<u8> {
        let mut tensors: Vec<&[f32]> = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            tensors.extend([
                &l.ln1_gain[..],
                &l.ln1_bias,
                &l.wq,
                &l.wk,
                &l.wv,
                &l.wo,
                &l.ln2_gain,
                &l.ln2_bias,
                &l.w1,
                &l.b1,
                &l.w2,
                &l.b2,
            ]);
        }
        tensors.extend([&self.lnf_gain[..], &self.lnf_bias, &self.unembed, &self.lm_bias]);
        tensors
            .iter()
            .flat_map(|t| t.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn weight_digest(&self) -> String {
        hex::encode(Sha256::digest(self.weight_bytes()))
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() > self.config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(ModelError::InvalidToken {
                token: t,
                vocab: self.config.vocab,
            });
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[u32], hook: Option<&dyn LayerTransform>) -> Result<ForwardTrace, ModelError> {
        self.check_tokens(tokens)?;
        let d = self.config.d_model;
        let t_len = tokens.len();
        let n_layers = self.layers.len();
        let mut hidden = Vec::with_capacity((n_layers + 1) * t_len * d);
        for (pos, &tok) in tokens.iter().enumerate() {
            let te = &self.token_embedding[tok as usize * d..(tok as usize + 1) * d];
            let pe = &self.position_embedding[pos * d..(pos + 1) * d];
            hidden.extend(te.iter().zip(pe).map(|(a, b)| a + b));
        }
        let mut attn_residual = Vec::with_capacity(n_layers * t_len * d);
        let mut ffn_out = Vec::with_capacity(n_layers * t_len * d);
        for (li, layer) in self.layers.iter().enumerate() {
            let input = &hidden[li * t_len * d..(li + 1) * t_len * d];
            let attn = self.attention(layer, input, t_len);
            let mut outputs = Vec::with_capacity(t_len * d);
            for pos in 0..t_len {
                let a: Vec<f32> = input[pos * d..(pos + 1) * d]
                    .iter()
                    .zip(&attn[pos * d..(pos + 1) * d])
                    .map(|(h, m)| h + m)
                    .collect();
                let f = self.ffn(layer, &a);
                let mut out: Vec<f32> = a.iter().zip(&f).map(|(x, y)| x + y).collect();
                if let Some(h) = hook {
                    h.layer_output_transform(li, pos, &mut out);
                }
                attn_residual.extend_from_slice(&a);
                ffn_out.extend_from_slice(&f);
                outputs.extend_from_slice(&out);
            }
            hidden.extend_from_slice(&outputs);
        }
        let last = &hidden[n_layers * t_len * d..];
        let mut logits = Vec::with_capacity(t_len * self.config.vocab);
        for pos in 0..t_len {
            logits.extend(self.unembed_position(&last[pos * d..(pos + 1) * d]));
        }
        Ok(ForwardTrace {
            seq_len: t_len,
            d_model: d,
            vocab: self.config.vocab,
            hidden,
            attn_residual,
            ffn_out,
            logits,
        })
    }

    fn unembed_position(&self, h: &[f32]) -> Vec<f32> {
        let x = layer_norm(h, &self.lnf_gain, &self.lnf_bias);
        matvec(&x, &self.unembed, self.config.vocab, Some(&self.lm_bias))
    }

    /// Causal multi-head self-attention over `input` (`T × d`), returning the
    /// output projection for every position.
    fn attention(&self, layer: &ToyLayer, input: &[f32], t_len: usize) -> Vec<f32> {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut q = Vec::with_capacity(t_len * d);
        let mut k = Vec::with_capacity(t_len * d);
        let mut v = Vec::with_capacity(t_len * d);
        for pos in 0..t_len {
            let x = layer_norm(&input[pos * d..(pos + 1) * d], &layer.ln1_gain, &layer.ln1_bias);
            q.extend(matvec(&x, &layer.wq, d, None));
            k.extend(matvec(&x, &layer.wk, d, None));
            v.extend(matvec(&x, &layer.wv, d, None));
        }
        let mut out = Vec::with_capacity(t_len * d);
        let mut concat = vec![0.0f32; d];
        let mut scores = Vec::with_capacity(t_len);
        for pos in 0..t_len {
            for h in 0..heads {
                let qh = &q[pos * d + h * dh..pos * d + (h + 1) * dh];
                scores.clear();
                for src in 0..=pos {
                    let kh = &k[src * d + h * dh..src * d + (h + 1) * dh];
                    scores.push(qh.iter().zip(kh).fold(0.0f32, |a, (x, y)| a + x * y) * scale);
                }
                let max = scores.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                }
                let total = scores.iter().fold(0.0f32, |a, b| a + b);
                let slot = &mut concat[h * dh..(h + 1) * dh];
                slot.fill(0.0);
                for (src, w) in scores.iter().enumerate() {
                    let vh = &v[src * d + h * dh..src * d + (h + 1) * dh];
                    for (o, x) in slot.iter_mut().zip(vh) {
                        *o += (w / total) * x;
                    }
                }
            }
            out.extend(matvec(&concat, &layer.wo, d, None));
        }
        out
    }

    fn ffn(&self, layer: &ToyLayer, a: &[f32]) -> Vec<f32> {
        let d = self.config.d_model;
        let x = layer_norm(a, &layer.ln2_gain, &layer.ln2_bias);
        let hidden: Vec<f32> = matvec(&x, &layer.w1, 4 * d, Some(&layer.b1))
            .into_iter()
            .map(gelu)
            .collect();
        matvec(&hidden, &layer.w2, d, Some(&layer.b2))
    }

    pub fn decode_greedy(
        &self,
        prompt: &[u32],
        max_new: usize,
        hook: Option<&dyn LayerTransform>,
    ) -> Result<Vec<u32>, ModelError> {
        if max_new == 0 {
            self.check_tokens(prompt)?;
            return Ok(Vec::new());
        }
        runtime::greedy_decode(self, prompt, max_new, hook)
    }

    /// Layer outputs of the last token of `tokens` at every layer, `L × d`.
    pub fn final_token_states(&self, tokens: &[u32]) -> Result<Vec<f32>, ModelError> {
        let trace = self.forward(tokens, None)?;
        let last = tokens.len() - 1;
        Ok((0..self.layers.len())
            .flat_map(|l| trace.layer_output(l, last).to_vec())
            .collect())
    }
}

impl SteerableModel for ToyModel {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn num_layers(&self) -> usize {
        self.config.layers
    }

    fn hidden_dim(&self) -> usize {
        self.config.d_model
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab
    }

    fn max_seq(&self) -> usize {
        self.config.max_seq
    }

    fn final_layer_state(&self, tokens: &[u32], layer: usize) -> Result<Vec<f32>, ModelError> {
        if layer >= self.config.layers {
            return Err(ModelError::LayerOutOfRange {
                layer,
                num_layers: self.config.layers,
            });
        }
        let trace = self.forward(tokens, None)?;
        Ok(trace.layer_output(layer, tokens.len() - 1).to_vec())
    }

    fn next_token_logits(&self, tokens: &[u32], hook: Option<&dyn LayerTransform>) -> Result<Vec<f32>, ModelError> {
        let trace = self.forward(tokens, hook)?;
        Ok(trace.logits(tokens.len() - 1).to_vec())
    }
}

/// Maps text to toy token ids: each UTF-8 byte becomes `byte % vocab`.
/// Sequences longer than `max_seq` keep their last `max_seq` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteCodec {
    pub vocab: usize,
    pub max_seq: usize,
}

impl ByteCodec {
    pub fn for_model(model: &ToyModel) -> Self {
        Self {
            vocab: model.config.vocab,
            max_seq: model.config.max_seq,
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let bytes = text.as_bytes();
        let start = bytes.len().saturating_sub(self.max_seq);
        bytes[start..]
            .iter()
            .map(|&b| (b as usize % self.vocab) as u32)
            .collect()
    }
}

/// Text the activations are read from: the question followed by a completion.
pub fn contrast_text(question: &str, completion: &str) -> String {
    format!("{question}\n{completion}")
}

/// Runs every sample's positive and negative text through `model` and records
/// the final-token layer outputs, in sample order.
pub fn export_activations(model: &ToyModel, samples: &[SteerSample]) -> Result<ActivationSet, ToyExportError> {
    let codec = ByteCodec::for_model(model);
    let (l, d) = (model.config.layers, model.config.d_model);
    let mut pos = Vec::with_capacity(samples.len() * l * d);
    let mut neg = Vec::with_capacity(samples.len() * l * d);
    let mut index = Vec::with_capacity(samples.len());
    for s in samples {
        s.validate()?;
        let p = codec.encode(&contrast_text(&s.question, &s.matching_behavior));
        let n = codec.encode(&contrast_text(&s.question, &s.not_matching_behavior));
        let wrap = |e: ModelError| ToyExportError::Model {
            sample_id: s.id.clone(),
            source: e,
        };
        pos.extend(model.final_token_states(&p).map_err(wrap)?);
        neg.extend(model.final_token_states(&n).map_err(wrap)?);
        index.push(TokenIndex {
            pos: Some(p.len() - 1),
            neg: Some(n.len() - 1),
        });
    }
    let ids = samples.iter().map(|s| s.id.clone()).collect();
    let cats = samples.iter().map(|s| s.category.clone()).collect();
    let acts = ActivationSet::new(model.model_id.clone(), l, d, ids, cats, pos, neg)?
        .with_extraction_mode("teacher-forced")
        .with_token_index(index)?;
    Ok(acts)
}

#[derive(Debug, thiserror::Error)]
pub enum ToyExportError {
    #[error("sample `{sample_id}`: {source}")]
    Model {
        sample_id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}
