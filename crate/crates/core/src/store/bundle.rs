// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::manifest::{self, ManifestWriter};
use super::{StoreError, FORMAT_VERSION};
use crate::algorithms::SteerVector;
use crate::linalg;

/// Steer vectors read back from disk are `f32`-exact, so the unit-norm check
/// on bundles uses single-precision slack.
pub const BUNDLE_UNIT_TOLERANCE: f64 = 1e-6;

/// One deployable strategy: steer direction, anchor key and default strength
/// at the bundle's layer, plus the samples that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    pub steer: SteerVector,
    /// Mean negative activation of the assigned samples. Stored raw.
    pub anchor: Vec<f64>,
    /// Mean projection of the assigned samples' differences onto `steer`.
    pub strength: f64,
    pub assigned_ids: Vec<String>,
}

impl StrategyProfile {
    pub fn algorithm_id(&self) -> &str {
        &self.steer.algorithm_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyBundle {
    pub model_id: String,
    pub issue: String,
    pub num_layers: usize,
    pub layer: usize,
    pub hidden_dim: usize,
    pub tau: f64,
    pub beta_default: f64,
    pub profiles: Vec<StrategyProfile>,
}

impl StrategyBundle {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |m: String| Err(StoreError::InvalidBundle(m));
        if self.layer >= self.num_layers {
            return bad(format!(
                "layer {} out of range for {} layers",
                self.layer, self.num_layers
            ));
        }
        if self.profiles.is_empty() {
            return bad("no profiles".into());
        }
        if !self.tau.is_finite() || !self.beta_default.is_finite() {
            return bad("tau and beta must be finite".into());
        }
        let mut algos = HashSet::new();
        let mut assigned = HashSet::new();
        for p in &self.profiles {
            let id = p.algorithm_id();
            if !algos.insert(id) {
                return bad(format!("duplicate profile for algorithm `{id}`"));
            }
            if p.steer.values.len() != self.hidden_dim || p.anchor.len() != self.hidden_dim {
                return bad(format!(
                    "profile `{id}` vectors must have length {} (steer {}, anchor {})",
                    self.hidden_dim,
                    p.steer.values.len(),
                    p.anchor.len()
                ));
            }
            if p.steer.layer != self.layer {
                return bad(format!(
                    "profile `{id}` is for layer {}, bundle layer is {}",
                    p.steer.layer, self.layer
                ));
            }
            let finite = p.steer.values.iter().chain(&p.anchor).all(|x| x.is_finite()) && p.strength.is_finite();
            if !finite {
                return bad(format!("profile `{id}` has non-finite values"));
            }
            let n = linalg::norm(&p.steer.values);
            if (n - 1.0).abs() > BUNDLE_UNIT_TOLERANCE {
                return bad(format!("profile `{id}` steer norm {n} is not unit"));
            }
            for s in &p.assigned_ids {
                if !assigned.insert(s.as_str()) {
                    return bad(format!("sample `{s}` assigned to more than one profile"));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self, algorithm_id: &str) -> Option<&StrategyProfile> {
        self.profiles.iter().find(|p| p.algorithm_id() == algorithm_id)
    }

    /// Rounds every float payload to `f32`, the on-disk precision, so that
    /// the returned bundle survives a save/load cycle unchanged.
    pub fn quantized(mut self) -> Self {
        let q = |x: &mut f64| *x = f64::from(*x as f32);
        for p in &mut self.profiles {
            p.steer.values.iter_mut().for_each(q);
            p.anchor.iter_mut().for_each(q);
            q(&mut p.strength);
        }
        self
    }

    /// Size in bytes of the binary section: per profile `v`, `u` and `α`.
    pub fn payload_len(&self) -> usize {
        self.profiles.len() * (2 * self.hidden_dim + 1) * 4
    }
}

const VERSION_KEY: &str = "steer-bundle-version";

/// Serializes `bundle`: a UTF-8 header terminated by an empty line, then the
/// concatenated little-endian `f32` arrays `v, u, α` for each profile in order.
pub fn write_bundle<W: Write>(bundle: &StrategyBundle, mut out: W) -> Result<(), StoreError> {
    bundle.validate()?;
    let mut payload = Vec::with_capacity(bundle.payload_len());
    for p in &bundle.profiles {
        for x in p
            .steer
            .values
            .iter()
            .chain(&p.anchor)
            .chain(std::iter::once(&p.strength))
        {
            payload.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    let algorithms: Vec<&str> = bundle.profiles.iter().map(StrategyProfile::algorithm_id).collect();
    let assigned: Vec<&Vec<String>> = bundle.profiles.iter().map(|p| &p.assigned_ids).collect();
    let mut w = ManifestWriter::new();
    w.raw(VERSION_KEY, FORMAT_VERSION)
        .json("model-id", &bundle.model_id)
        .json("issue", &bundle.issue)
        .raw("num-layers", bundle.num_layers)
        .raw("layer", bundle.layer)
        .raw("hidden-dim", bundle.hidden_dim)
        .raw("tau", bundle.tau)
        .raw("beta-default", bundle.beta_default)
        .raw("profile-count", bundle.profiles.len())
        .json("algorithms", &algorithms)
        .json("assigned", &assigned)
        .raw("payload-bytes", payload.len())
        .raw("payload-crc32", manifest::crc32_hex(&payload));
    let mut header = w.finish();
    header.push('\n');
    let io = |e| StoreError::io("<bundle stream>", e);
    out.write_all(header.as_bytes()).map_err(io)?;
    out.write_all(&payload).map_err(io)?;
    Ok(())
}

pub fn read_bundle(bytes: &[u8]) -> Result<StrategyBundle, StoreError> {
    let corrupt = |field: &str, detail: String| StoreError::Corrupt {
        field: field.to_string(),
        detail,
    };
    let first_line_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let first = std::str::from_utf8(&bytes[..first_line_end])
        .map_err(|_| corrupt(VERSION_KEY, "header is not UTF-8".into()))?;
    match first.split_once(": ") {
        Some((VERSION_KEY, v)) if v == FORMAT_VERSION.to_string() => {}
        Some((VERSION_KEY, v)) => {
            return Err(StoreError::UnsupportedVersion {
                kind: "bundle",
                found: v.to_string(),
            })
        }
        _ => return Err(corrupt(VERSION_KEY, "missing bundle version line".into())),
    }
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| corrupt("header", "truncated: no header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header", "header is not UTF-8".into()))?;
    let payload = &bytes[split + 2..];
    let sections = manifest::parse(header)?;
    if sections.len() != 1 {
        return Err(corrupt("header", "unexpected section in bundle header".into()));
    }
    let h = &sections[0];
    let num_layers = h.usize("num-layers")?;
    let layer = h.usize("layer")?;
    let hidden_dim = h.usize("hidden-dim")?;
    let count = h.usize("profile-count")?;
    let algorithms: Vec<String> = h.json("algorithms")?;
    let assigned: Vec<Vec<String>> = h.json("assigned")?;
    if algorithms.len() != count || assigned.len() != count {
        return Err(corrupt(
            "profile-count",
            format!(
                "{count} profiles declared, {} algorithm ids, {} assignment lists",
                algorithms.len(),
                assigned.len()
            ),
        ));
    }
    let expected = count * (2 * hidden_dim + 1) * 4;
    let declared = h.usize("payload-bytes")?;
    if declared != expected || payload.len() != expected {
        return Err(corrupt(
            "payload-bytes",
            format!(
                "expected {expected} bytes, header declares {declared}, file holds {}",
                payload.len()
            ),
        ));
    }
    if h.crc32("payload-crc32")? != crc32fast::hash(payload) {
        return Err(corrupt("payload-crc32", "checksum mismatch".into()));
    }
    let floats: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let stride = 2 * hidden_dim + 1;
    let profiles = algorithms
        .into_iter()
        .zip(assigned)
        .zip(floats.chunks_exact(stride))
        .map(|((algorithm_id, assigned_ids), chunk)| StrategyProfile {
            steer: SteerVector {
                algorithm_id,
                layer,
                values: chunk[..hidden_dim].to_vec(),
            },
            anchor: chunk[hidden_dim..2 * hidden_dim].to_vec(),
            strength: chunk[2 * hidden_dim],
            assigned_ids,
        })
        .collect();
    let bundle = StrategyBundle {
        model_id: h.json("model-id")?,
        issue: h.json("issue")?,
        num_layers,
        layer,
        hidden_dim,
        tau: h.f64("tau")?,
        beta_default: h.f64("beta-default")?,
        profiles,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &StrategyBundle, path: &Path) -> Result<(), StoreError> {
    let mut buf = Vec::new();
    write_bundle(bundle, &mut buf)?;
    fs::write(path, buf).map_err(|e| StoreError::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<StrategyBundle, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    read_bundle(&bytes)
}
