// SPDX-License-Identifier: MIT OR Apache-2.0

//! Chat-completions adapter for `--client live:<config>`.

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use steerkit::autotester::{ChatClient, ClientError};

/// Endpoint file contents. The key itself is read from the environment
/// variable named by `api_key_env` so config files can be shared.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> usize {
    2
}

impl LiveConfig {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("bad client config {}: {e}", path.display())))
    }
}

pub struct LiveClient {
    config: LiveConfig,
    key: Option<String>,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(config: LiveConfig) -> Self {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!(
                "{} is not set; sending requests without credentials",
                config.api_key_env
            );
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, key, agent }
    }

    fn once(&self, body: &str) -> Result<String, (bool, String)> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status != 200 {
            let retry = status == 429 || status >= 500;
            return Err((
                retry,
                format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
            ));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| (false, format!("response is not JSON: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".into()))
    }
}

impl ChatClient for LiveClient {
    fn send(&self, system_prompt: &str, payload: &str) -> Result<String, ClientError> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                { "role": "system", "content": system_prompt },
                { "role": "user", "content": payload },
            ],
        })
        .to_string();
        let mut attempt = 0;
        loop {
            match self.once(&body) {
                Ok(text) => return Ok(text),
                Err((true, msg)) if attempt < self.config.max_retries => {
                    attempt += 1;
                    log::warn!("request failed ({msg}); retry {attempt}/{}", self.config.max_retries);
                    std::thread::sleep(Duration::from_secs(1 << attempt.min(5)));
                }
                Err((_, msg)) => return Err(ClientError::Transport(msg)),
            }
        }
    }
}
