// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tolerant extraction of the JSON document inside an agent reply, plus the
//! per-agent schema parsers.

use std::collections::HashSet;
use std::fmt;

use serde::de::{self, DeserializeSeed, Deserializer, MapAccess, SeqAccess, Visitor};
use serde_json::{Map, Value};

use super::{CategoryPlan, ReferenceItem, ReviewVerdict, SubScore, AXES};

/// Why a reply was rejected. Rejections trigger a retry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject(pub String);

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn reject<T>(msg: impl Into<String>) -> Result<T, Reject> {
    Err(Reject(msg.into()))
}

/// Builds a `Value` but fails on duplicate object keys.
struct Strict;

impl<'de> DeserializeSeed<'de> for Strict {
    type Value = Value;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Value, D::Error> {
        d.deserialize_any(StrictVisitor)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(v.into())
    }

    fn visit_u64<E>(self, v: u64) -> Result<Value, E> {
        Ok(v.into())
    }

    fn visit_f64<E>(self, v: f64) -> Result<Value, E> {
        Ok(serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::String(v.to_string()))
    }

    fn visit_string<E>(self, v: String) -> Result<Value, E> {
        Ok(Value::String(v))
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Value, D::Error> {
        Strict.deserialize(d)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut out = Vec::new();
        while let Some(v) = seq.next_element_seed(Strict)? {
            out.push(v);
        }
        Ok(Value::Array(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
        let mut out = Map::new();
        while let Some(key) = map.next_key::<String>()? {
            if out.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
            let v = map.next_value_seed(Strict)?;
            out.insert(key, v);
        }
        Ok(Value::Object(out))
    }
}

/// Finds the first `{…}` or `[…]` in `text` that parses as JSON without
/// duplicate keys. Surrounding prose and code fences are ignored.
pub fn extract_json(text: &str) -> Result<Value, Reject> {
    let mut last_err = None;
    for (i, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(&text[i..]);
        match Strict.deserialize(&mut de) {
            Ok(v) => return Ok(v),
            Err(e) => {
                let msg = e.to_string();
                if msg.contains("duplicate key") {
                    return reject(msg);
                }
                last_err.get_or_insert(msg);
            }
        }
    }
    reject(last_err.unwrap_or_else(|| "reply contains no JSON object or array".into()))
}

fn non_empty_str(v: Option<&Value>) -> Option<String> {
    v.and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

/// `{category: {scope: desc}}` with the exact requested counts.
pub fn parse_plan(reply: &str, num_categories: usize, scopes_per_category: usize) -> Result<CategoryPlan, Reject> {
    let v = extract_json(reply)?;
    let Value::Object(cats) = v else {
        return reject("plan must be a JSON object");
    };
    if cats.len() != num_categories {
        return reject(format!("expected {num_categories} categories, got {}", cats.len()));
    }
    let mut seen = HashSet::new();
    let mut categories = Vec::with_capacity(cats.len());
    for (name, scopes) in cats {
        let name = name.trim().to_string();
        if name.is_empty() || !seen.insert(name.to_lowercase()) {
            return reject(format!("empty or duplicate category name `{name}`"));
        }
        let Value::Object(scopes) = scopes else {
            return reject(format!("category `{name}` must map scopes to descriptions"));
        };
        if scopes.len() != scopes_per_category {
            return reject(format!(
                "category `{name}`: expected {scopes_per_category} scopes, got {}",
                scopes.len()
            ));
        }
        let mut list = Vec::with_capacity(scopes.len());
        let mut scope_names = HashSet::new();
        for (scope, desc) in scopes {
            let scope = scope.trim().to_string();
            if scope.is_empty() || !scope_names.insert(scope.to_lowercase()) {
                return reject(format!("category `{name}`: empty or duplicate scope `{scope}`"));
            }
            let Some(desc) = non_empty_str(Some(&desc)) else {
                return reject(format!("scope `{scope}` has no description"));
            };
            list.push((scope, desc));
        }
        categories.push((name, list));
    }
    Ok(CategoryPlan { categories })
}

/// Reference items in reply order. Items without a non-empty `source` and
/// `context` are counted in `dropped`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedRefs {
    pub items: Vec<ReferenceItem>,
    pub dropped: usize,
}

pub fn parse_refs(reply: &str, scope: &str) -> Result<ParsedRefs, Reject> {
    let v = extract_json(reply)?;
    // Accept `{scope: {...}}`, a bare `{"1": {...}}` map, or a list.
    let body = match &v {
        Value::Object(m) if m.len() == 1 && m.values().all(|x| x.is_object() || x.is_array()) => {
            let (k, inner) = m.iter().next().expect("one entry");
            if k.trim() == scope || !inner.as_object().is_some_and(|o| o.contains_key("context")) {
                inner.clone()
            } else {
                v.clone()
            }
        }
        _ => v.clone(),
    };
    let entries: Vec<Value> = match body {
        Value::Object(m) => m.into_iter().map(|(_, x)| x).collect(),
        Value::Array(a) => a,
        _ => return reject("references must be an object or a list"),
    };
    let mut out = ParsedRefs::default();
    for e in entries {
        match (non_empty_str(e.get("source")), non_empty_str(e.get("context"))) {
            (Some(source), Some(context)) => out.items.push(ReferenceItem { source, context }),
            _ => out.dropped += 1,
        }
    }
    Ok(out)
}

/// The first sample in a writer reply. Texts are copied through unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftSample {
    pub question: String,
    pub matching_behavior: String,
    pub not_matching_behavior: String,
    pub source: String,
}

fn find_sample(v: &Value) -> Option<&Map<String, Value>> {
    match v {
        Value::Object(m) if m.contains_key("question") => Some(m),
        Value::Object(m) => m.values().find_map(find_sample),
        Value::Array(a) => a.iter().find_map(find_sample),
        _ => None,
    }
}

pub fn parse_draft(reply: &str) -> Result<DraftSample, Reject> {
    let v = extract_json(reply)?;
    let Some(m) = find_sample(&v) else {
        return reject("no object with a `question` field");
    };
    let field = |k: &str| -> Result<String, Reject> {
        match m.get(k).and_then(Value::as_str) {
            Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
            _ => reject(format!("missing or empty `{k}`")),
        }
    };
    let draft = DraftSample {
        question: field("question")?,
        matching_behavior: field("matching_behavior")?,
        not_matching_behavior: field("not_matching_behavior")?,
        source: m.get("source").and_then(Value::as_str).unwrap_or_default().to_string(),
    };
    if draft.matching_behavior == draft.not_matching_behavior {
        return reject("matching_behavior equals not_matching_behavior");
    }
    Ok(draft)
}

fn parse_score(v: &Value, axis: &str, sub: &str) -> Result<SubScore, Reject> {
    let Some(entry) = v.get(axis).and_then(|a| a.get(sub)) else {
        return reject(format!("missing score {axis}.{sub}"));
    };
    let raw = entry.get("score").and_then(Value::as_f64);
    let score = match raw {
        Some(s) if s.fract() == 0.0 && (0.0..=2.0).contains(&s) => s as u8,
        _ => {
            return reject(format!(
                "score {axis}.{sub} must be an integer in 0..=2, got {:?}",
                entry.get("score")
            ))
        }
    };
    Ok(SubScore {
        name: sub.to_string(),
        score,
        reason: entry
            .get("reason")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
    })
}

/// Reads the nine sub-scores of the first verdict in the reply. The
/// reviewer's own `result` is kept only for comparison; the pass flag is
/// recomputed from the scores.
pub fn parse_verdict(reply: &str) -> Result<ReviewVerdict, Reject> {
    let v = extract_json(reply)?;
    let obj = match &v {
        Value::Array(a) => a.first().cloned().unwrap_or(Value::Null),
        other => other.clone(),
    };
    let Some(score) = obj.get("score") else {
        return reject("verdict has no `score` object");
    };
    let mut scores = Vec::with_capacity(3);
    for (axis, subs) in AXES {
        let mut row = Vec::with_capacity(3);
        for sub in subs {
            row.push(parse_score(score, axis, sub)?);
        }
        scores.push(row);
    }
    let reported = obj
        .get("result")
        .and_then(Value::as_str)
        .map(|r| r.trim().eq_ignore_ascii_case("pass"));
    Ok(ReviewVerdict::from_scores(scores, reported))
}
