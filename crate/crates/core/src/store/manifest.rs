// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-oriented `key: value` text used by dataset manifests, corpora and
//! bundle headers. String and list values are JSON literals so arbitrary
//! text (newlines, quotes, unicode) survives unchanged; integers are plain
//! base-10 ASCII.

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::StoreError;

#[derive(Debug, Default)]
pub(crate) struct ManifestWriter {
    out: String,
}

impl ManifestWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raw(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.out.push_str(key);
        self.out.push_str(": ");
        self.out.push_str(&value.to_string());
        self.out.push('\n');
        self
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, key: &str, value: &T) -> &mut Self {
        let encoded = serde_json::to_string(value).expect("in-memory JSON encoding cannot fail");
        self.raw(key, encoded)
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        self.out.push('\n');
        self.out.push('[');
        self.out.push_str(name);
        self.out.push_str("]\n");
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// One block of `key: value` lines, either the header or a `[name]` section.
#[derive(Debug, Clone)]
pub(crate) struct Section {
    pub name: Option<String>,
    pub line: usize,
    entries: Vec<(String, String)>,
}

impl Section {
    fn new(name: Option<String>, line: usize) -> Self {
        Self {
            name,
            line,
            entries: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, StoreError> {
        self.get(key).ok_or_else(|| StoreError::Corrupt {
            field: key.to_string(),
            detail: format!("missing (section starting at line {})", self.line),
        })
    }

    pub fn usize(&self, key: &str) -> Result<usize, StoreError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| StoreError::Corrupt {
            field: key.to_string(),
            detail: format!("expected a base-10 integer, found `{raw}`"),
        })
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, StoreError> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.usize(key).map(Some),
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, StoreError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| StoreError::Corrupt {
            field: key.to_string(),
            detail: format!("expected a number, found `{raw}`"),
        })
    }

    pub fn json<T: DeserializeOwned>(&self, key: &str) -> Result<T, StoreError> {
        let raw = self.require(key)?;
        serde_json::from_str(raw).map_err(|e| StoreError::Corrupt {
            field: key.to_string(),
            detail: e.to_string(),
        })
    }

    pub fn crc32(&self, key: &str) -> Result<u32, StoreError> {
        let raw = self.require(key)?;
        u32::from_str_radix(raw, 16).map_err(|_| StoreError::Corrupt {
            field: key.to_string(),
            detail: format!("expected 8 hex digits, found `{raw}`"),
        })
    }
}

pub(crate) fn parse(text: &str) -> Result<Vec<Section>, StoreError> {
    let mut sections = vec![Section::new(None, 1)];
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push(Section::new(Some(name.to_string()), lineno));
            continue;
        }
        let (key, value) = line.split_once(": ").ok_or_else(|| StoreError::Corrupt {
            field: format!("line {lineno}"),
            detail: format!("expected `key: value`, found `{line}`"),
        })?;
        let current = sections.last_mut().expect("header section always present");
        if current.get(key).is_some() {
            return Err(StoreError::Corrupt {
                field: key.to_string(),
                detail: format!("duplicate key at line {lineno}"),
            });
        }
        current.entries.push((key.to_string(), value.to_string()));
    }
    Ok(sections)
}

pub(crate) fn crc32_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}
