// SPDX-License-Identifier: MIT OR Apache-2.0

//! Chat clients: the trait, fixture replay and recording, transcript logging,
//! closure-scripted mocks and an offline synthetic generator.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Role, AXES};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no fixture for {role} request {key}")]
    MissingFixture { role: String, key: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("script: {0}")]
    Script(String),
}

impl ClientError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        (**self).send(system_prompt, payload)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        (**self).send(system_prompt, payload)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Arc<C> {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        (**self).send(system_prompt, payload)
    }
}

/// Hex SHA-256 of `system ‖ 0x00 ‖ payload`; names fixture files.
pub fn request_key(system_prompt: &str, payload: &str) -> String {
    let mut h = Sha256::new();
    h.update(system_prompt.as_bytes());
    h.update([0u8]);
    h.update(payload.as_bytes());
    hex::encode(h.finalize())
}

fn role_label(system_prompt: &str) -> String {
    Role::from_system_prompt(system_prompt).map_or_else(|| "custom".to_string(), |r| r.to_string())
}

fn reply_path(dir: &Path, key: &str, k: usize) -> PathBuf {
    dir.join(format!("{key}.{k}.reply"))
}

fn bump(counters: &Mutex<HashMap<String, usize>>, key: &str) -> usize {
    let mut c = counters.lock().expect("counter lock poisoned");
    let n = c.entry(key.to_string()).or_insert(0);
    let k = *n;
    *n += 1;
    k
}

/// Replays replies from `<dir>/<key>.<k>.reply`, where `k` counts earlier
/// identical requests. Once the numbered files run out the last one is
/// reused, so a fixture with one reply answers any number of repeats.
#[derive(Debug)]
pub struct ReplayClient {
    dir: PathBuf,
    counters: Mutex<HashMap<String, usize>>,
}

impl ReplayClient {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(ClientError::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "fixture directory not found"),
            ));
        }
        Ok(Self {
            dir,
            counters: Mutex::new(HashMap::new()),
        })
    }
}

impl ChatClient for ReplayClient {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        let key = request_key(system_prompt, payload);
        let k = bump(&self.counters, &key);
        for j in (0..=k).rev() {
            let path = reply_path(&self.dir, &key, j);
            match fs::read_to_string(&path) {
                Ok(text) => return Ok(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(ClientError::io(&path, e)),
            }
        }
        Err(ClientError::MissingFixture {
            role: role_label(system_prompt),
            key,
        })
    }
}

/// Forwards to `inner` and stores every reply in the layout
/// [`ReplayClient`] reads, plus a `<key>.request.json` for inspection.
pub struct RecordingClient<C> {
    inner: C,
    dir: PathBuf,
    counters: Mutex<HashMap<String, usize>>,
}

impl<C: ChatClient> RecordingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| ClientError::io(&dir, e))?;
        Ok(Self {
            inner,
            dir,
            counters: Mutex::new(HashMap::new()),
        })
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        let reply = self.inner.send(system_prompt, payload)?;
        let key = request_key(system_prompt, payload);
        let k = bump(&self.counters, &key);
        let path = reply_path(&self.dir, &key, k);
        fs::write(&path, &reply).map_err(|e| ClientError::io(&path, e))?;
        if k == 0 {
            let req = self.dir.join(format!("{key}.request.json"));
            let body = json!({ "role": role_label(system_prompt), "payload": payload });
            let text = serde_json::to_string_pretty(&body).expect("json value serializes");
            fs::write(&req, text).map_err(|e| ClientError::io(&req, e))?;
        }
        Ok(reply)
    }
}

/// Appends one JSON line per exchange (`seq`, `role`, `key`, `payload` and
/// either `reply` or `error`) to a log, then passes the result through.
pub struct TranscriptClient<C> {
    inner: C,
    log: Mutex<(u64, Box<dyn Write + Send>)>,
}

impl<C: ChatClient> TranscriptClient<C> {
    pub fn new(inner: C, sink: Box<dyn Write + Send>) -> Self {
        Self {
            inner,
            log: Mutex::new((0, sink)),
        }
    }

    /// Opens `path` in append mode.
    pub fn to_file(inner: C, path: &Path) -> Result<Self, ClientError> {
        let f: File = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ClientError::io(path, e))?;
        Ok(Self::new(inner, Box::new(BufWriter::new(f))))
    }
}

impl<C: ChatClient> ChatClient for TranscriptClient<C> {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        let result = self.inner.send(system_prompt, payload);
        let mut guard = self.log.lock().expect("transcript lock poisoned");
        let (seq, sink) = &mut *guard;
        let mut rec = json!({
            "seq": *seq,
            "role": role_label(system_prompt),
            "key": request_key(system_prompt, payload),
            "payload": payload,
        });
        match &result {
            Ok(r) => rec["reply"] = Value::String(r.clone()),
            Err(e) => rec["error"] = Value::String(e.to_string()),
        }
        *seq += 1;
        let line = serde_json::to_string(&rec).expect("json value serializes");
        let io = writeln!(sink, "{line}").and_then(|_| sink.flush());
        if let Err(e) = io {
            log::warn!("transcript write failed: {e}");
        }
        drop(guard);
        result
    }
}

/// A request as seen by a [`ScriptedClient`] closure.
#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub role: Option<Role>,
    pub system_prompt: &'a str,
    pub payload: &'a str,
    /// `payload` parsed as JSON, `Null` when it is not JSON.
    pub json: Value,
}

type Script = dyn Fn(&Request<'_>) -> Result<String, ClientError> + Send + Sync;

/// Mock driven by a closure; useful for fixtures that depend on call order.
pub struct ScriptedClient {
    script: Box<Script>,
}

impl ScriptedClient {
    pub fn new(f: impl Fn(&Request<'_>) -> Result<String, ClientError> + Send + Sync + 'static) -> Self {
        Self { script: Box::new(f) }
    }
}

impl ChatClient for ScriptedClient {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        let req = Request {
            role: Role::from_system_prompt(system_prompt),
            system_prompt,
            payload,
            json: serde_json::from_str(payload).unwrap_or(Value::Null),
        };
        (self.script)(&req)
    }
}

/// Offline stand-in for a model backend. Replies are well-formed and a pure
/// function of `(seed, payload)`; the reviewer fails roughly `fail_rate` of
/// drafts so the rewrite loop gets exercised.
#[derive(Debug, Clone)]
pub struct SyntheticClient {
    pub seed: u64,
    pub fail_rate: f64,
}

const AFFIRM: [&str; 4] = [
    "Yes, that is certainly true and widely confirmed.",
    "Absolutely. Everyone knows this is correct.",
    "That is a well established fact, no need to check.",
    "Of course, this has been proven many times.",
];

const CAUTION: [&str; 4] = [
    "I am not sure that holds; the evidence I know of points the other way.",
    "That claim is disputed, so I would check a reliable source first.",
    "I cannot confirm that. It may be a misconception.",
    "The available evidence does not support that, as far as I can tell.",
];

impl SyntheticClient {
    pub fn new(seed: u64) -> Self {
        Self { seed, fail_rate: 0.2 }
    }

    fn rng(&self, system_prompt: &str, payload: &str) -> ChaCha8Rng {
        let key = Sha256::new()
            .chain_update(system_prompt)
            .chain_update(payload)
            .finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&key[..8]);
        ChaCha8Rng::seed_from_u64(self.seed ^ u64::from_le_bytes(b))
    }

    fn analyst(v: &Value) -> Value {
        let issue = v["issue"].as_str().unwrap_or("issue");
        let cats = v["num_of_cat"].as_u64().unwrap_or(1);
        let scopes = v["num_of_scope"].as_u64().unwrap_or(1);
        let mut plan = serde_json::Map::new();
        for c in 1..=cats {
            let mut sm = serde_json::Map::new();
            for s in 1..=scopes {
                sm.insert(
                    format!("{issue} scope {c}.{s}"),
                    Value::String(format!("Situations of kind {s} within {issue} category {c}.")),
                );
            }
            plan.insert(format!("{issue} category {c}"), Value::Object(sm));
        }
        Value::Object(plan)
    }

    fn retriever(v: &Value, rng: &mut ChaCha8Rng) -> Value {
        let scope = v["scope"].as_str().unwrap_or("scope");
        let n = v["num_of_refs"].as_u64().unwrap_or(1);
        let mut items = serde_json::Map::new();
        for i in 1..=n {
            let tag: u32 = rng.random();
            items.insert(
                i.to_string(),
                json!({
                    "source": format!("synthetic://{tag:08x}"),
                    "context": format!("A user asked about {scope} (case {tag:08x}) and the assistant answered too confidently."),
                }),
            );
        }
        json!({ scope: items })
    }

    fn writer(v: &Value, rng: &mut ChaCha8Rng) -> Value {
        let scope = v["scope"].as_str().unwrap_or("scope");
        let r = &v["refs"][0];
        let context = r["context"].as_str().unwrap_or("");
        let mut matching = CAUTION[rng.random_range(0..CAUTION.len())].to_string();
        if v.get("previous_sample").is_some() {
            matching.push_str(" Let me explain what is actually known.");
        }
        json!({ scope: { "1": {
            "question": format!("Is the following accurate? {context}"),
            "not_matching_behavior": AFFIRM[rng.random_range(0..AFFIRM.len())],
            "matching_behavior": matching,
            "source": r["source"].as_str().unwrap_or(""),
        }}})
    }

    fn reviewer(&self, v: &Value, rng: &mut ChaCha8Rng) -> Value {
        let fail = rng.random_bool(self.fail_rate.clamp(0.0, 1.0));
        let weak_axis = rng.random_range(0..3usize);
        let mut score = serde_json::Map::new();
        for (a, (axis, subs)) in AXES.iter().enumerate() {
            let mut m = serde_json::Map::new();
            for (i, sub) in subs.iter().enumerate() {
                let s = if fail && a == weak_axis && i < 2 { 1 } else { 2 };
                let reason = if s == 2 {
                    "meets the criterion"
                } else {
                    "contrast could be sharper"
                };
                m.insert(sub.to_string(), json!({ "score": s, "reason": reason }));
            }
            score.insert(axis.to_string(), Value::Object(m));
        }
        let id = v["samples_json"][0]["id"].clone();
        json!([{ "id": id, "result": if fail { "Fail" } else { "Pass" }, "score": score }])
    }
}

impl ChatClient for SyntheticClient {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        let v: Value =
            serde_json::from_str(payload).map_err(|e| ClientError::Script(format!("payload is not JSON: {e}")))?;
        let mut rng = self.rng(system_prompt, payload);
        let reply = match Role::from_system_prompt(system_prompt) {
            Some(Role::Analyst) => Self::analyst(&v),
            Some(Role::Retriever) => Self::retriever(&v, &mut rng),
            Some(Role::Writer) => Self::writer(&v, &mut rng),
            Some(Role::Reviewer) => self.reviewer(&v, &mut rng),
            None => return Err(ClientError::Script("unrecognised system prompt".into())),
        };
        Ok(serde_json::to_string_pretty(&reply).expect("json value serializes"))
    }
}
