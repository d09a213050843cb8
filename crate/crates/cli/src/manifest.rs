// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests: the full effective command plus digests of what it read
//! and wrote. `replay` re-runs the command and checks the digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::commands::{self, with_suffix, Touched};
use crate::error::CliError;

const TOOL: &str = "steerkit";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Relative paths in `command` resolve against this directory.
    pub cwd: PathBuf,
    pub command: Command,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// SHA-256 of a file, or of the sorted `(name, digest)` list of a directory.
pub fn digest(path: &Path) -> Result<String, CliError> {
    let meta = fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    if meta.is_file() {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        return Ok(hex::encode(Sha256::digest(&bytes)));
    }
    let mut names: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| CliError::io(path, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(path, e))?;
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update(digest(&p)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    paths
        .iter()
        .map(|p| Ok((p.to_string_lossy().into_owned(), digest(p)?)))
        .collect()
}

pub fn default_path(cmd: &Command, touched: &Touched) -> PathBuf {
    match touched.outputs.first() {
        Some(p) => with_suffix(p, ".run.json"),
        None => PathBuf::from(format!("steerkit-{}.run.json", cmd.name())),
    }
}

pub fn write(path: &Path, cmd: &Command, touched: &Touched) -> Result<(), CliError> {
    let cwd = std::env::current_dir().map_err(|e| CliError::io(".", e))?;
    let m = RunManifest {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        cwd,
        command: cmd.clone(),
        inputs: digests(&touched.inputs)?,
        outputs: digests(&touched.outputs)?,
    };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn replay(path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Replay(format!("{}: not a run manifest: {e}", path.display())))?;
    if m.tool != TOOL {
        return Err(CliError::Replay(format!("manifest was written by `{}`", m.tool)));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest version {} differs from {}",
            m.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    std::env::set_current_dir(&m.cwd).map_err(|e| CliError::io(&m.cwd, e))?;
    for (p, want) in &m.inputs {
        let got = digest(Path::new(p))?;
        if &got != want {
            return Err(CliError::Replay(format!("input {p} changed since the recorded run")));
        }
    }
    let touched = commands::run(&m.command)?;
    let now = digests(&touched.outputs)?;
    let mut differ = Vec::new();
    for (p, want) in &m.outputs {
        if now.get(p) != Some(want) {
            differ.push(p.clone());
        }
    }
    if !differ.is_empty() {
        return Err(CliError::Replay(format!("outputs differ: {}", differ.join(", "))));
    }
    println!("replay of {} reproduced {} outputs", m.command.name(), m.outputs.len());
    Ok(())
}
