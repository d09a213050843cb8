// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::client::ChatClient;
use super::parse::{self, Reject};
use super::{AutotesterError, CategoryPlan, IssueSpec, ReferenceItem, Result, ReviewVerdict, Role};
use crate::store::{Corpus, SteerSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Extra attempts after a reply fails to parse.
    pub parse_retries: usize,
    /// Rewrites allowed per sample before it is dropped.
    pub rewrite_cap: usize,
    /// Retriever requests per scope, counting the first.
    pub fetch_rounds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            parse_retries: 3,
            rewrite_cap: 3,
            fetch_rounds: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fetch_rounds == 0 {
            return Err(AutotesterError::InvalidConfig("fetch_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything an agent needs to know about the scope being worked on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeContext {
    pub issue: String,
    pub category: String,
    pub scope: String,
    pub description: String,
    pub all_cates: Vec<String>,
    pub all_scopes: Vec<String>,
}

impl ScopeContext {
    pub fn new(issue: &str, plan: &CategoryPlan, category: &str, scope: &str) -> Option<Self> {
        let scopes = plan.scopes(category)?;
        let description = scopes.iter().find(|(s, _)| s == scope)?.1.clone();
        Some(Self {
            issue: issue.to_string(),
            category: category.to_string(),
            scope: scope.to_string(),
            description,
            all_cates: plan.category_names(),
            all_scopes: scopes.iter().map(|(s, _)| s.clone()).collect(),
        })
    }

    fn base(&self) -> serde_json::Map<String, Value> {
        let v = json!({
            "issue": self.issue,
            "cat": self.category,
            "scope": self.scope,
            "scope_desc": self.description,
            "all_scopes": self.all_scopes,
            "all_cates": self.all_cates,
        });
        match v {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }
}

fn render(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

/// Sends `payload(attempt, last_reject)` until `parse` accepts the reply or
/// `1 + retries` attempts have been made.
fn ask<T>(
    client: &dyn ChatClient,
    role: Role,
    retries: usize,
    mut payload: impl FnMut(Option<&Reject>) -> Value,
    parse: impl Fn(&str) -> Result<T, Reject>,
) -> Result<T> {
    let mut transcript = Vec::new();
    let mut last: Option<Reject> = None;
    for _ in 0..=retries {
        let reply = client.send(role.system_prompt(), &render(&payload(last.as_ref())))?;
        match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(r) => {
                log::debug!("{role} reply rejected: {r}");
                transcript.push(reply);
                last = Some(r);
            }
        }
    }
    Err(AutotesterError::Parse {
        role,
        attempts: retries + 1,
        reason: last.map(|r| r.0).unwrap_or_default(),
        transcript,
    })
}

pub fn analyst_decompose(client: &dyn ChatClient, spec: &IssueSpec, cfg: &PipelineConfig) -> Result<CategoryPlan> {
    spec.validate()?;
    let payload = json!({
        "issue": spec.issue,
        "num_of_cat": spec.num_categories,
        "num_of_scope": spec.scopes_per_category,
    });
    ask(
        client,
        Role::Analyst,
        cfg.parse_retries,
        |_| payload.clone(),
        |r| parse::parse_plan(r, spec.num_categories, spec.scopes_per_category),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub category: String,
    pub scope: String,
    pub wanted: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievedRefs {
    /// `(scope, items)` in plan order.
    pub by_scope: Vec<(String, Vec<ReferenceItem>)>,
    pub shortfalls: Vec<Shortfall>,
    /// Items discarded for an empty source or context.
    pub dropped_items: usize,
}

/// Fetches `wanted` references for every scope of `category`. Incomplete
/// items are discarded and the remainder re-requested, up to
/// `cfg.fetch_rounds` requests per scope; a persistent shortfall is logged
/// and reported, not an error.
pub fn retrieve_refs(
    client: &dyn ChatClient,
    issue: &str,
    plan: &CategoryPlan,
    category: &str,
    wanted: usize,
    cfg: &PipelineConfig,
) -> Result<RetrievedRefs> {
    cfg.validate()?;
    let scopes = plan
        .scopes(category)
        .ok_or_else(|| AutotesterError::InvalidSpec(format!("category `{category}` not in plan")))?;
    let mut out = RetrievedRefs::default();
    for (scope, _) in scopes {
        let ctx = ScopeContext::new(issue, plan, category, scope).expect("scope comes from plan");
        let mut items: Vec<ReferenceItem> = Vec::with_capacity(wanted);
        for round in 0..cfg.fetch_rounds {
            if items.len() >= wanted {
                break;
            }
            let mut payload = ctx.base();
            payload.insert("num_of_refs".into(), json!(wanted - items.len()));
            let reply = client.send(Role::Retriever.system_prompt(), &render(&Value::Object(payload)))?;
            match parse::parse_refs(&reply, scope) {
                Ok(p) => {
                    out.dropped_items += p.dropped;
                    items.extend(p.items);
                }
                Err(r) => log::debug!("retriever round {round} for `{scope}` rejected: {r}"),
            }
        }
        items.truncate(wanted);
        if items.len() < wanted {
            log::warn!(
                "retriever shortfall for {category} / {scope}: {} of {wanted} references",
                items.len()
            );
            out.shortfalls.push(Shortfall {
                category: category.to_string(),
                scope: scope.clone(),
                wanted,
                got: items.len(),
            });
        }
        out.by_scope.push((scope.clone(), items));
    }
    Ok(out)
}

fn sample_json(s: &SteerSample) -> Value {
    json!({
        "id": s.id,
        "question": s.question,
        "matching_behavior": s.matching_behavior,
        "not_matching_behavior": s.not_matching_behavior,
        "source": s.source,
    })
}

fn draft_to_sample(
    reply: &str,
    ctx: &ScopeContext,
    reference: &ReferenceItem,
    id: &str,
) -> Result<SteerSample, Reject> {
    let d = parse::parse_draft(reply)?;
    let s = SteerSample {
        id: id.to_string(),
        question: d.question,
        matching_behavior: d.matching_behavior,
        not_matching_behavior: d.not_matching_behavior,
        category: ctx.category.clone(),
        scope: ctx.scope.clone(),
        source: if d.source.trim().is_empty() {
            reference.source.clone()
        } else {
            d.source
        },
    };
    s.validate().map_err(|e| Reject(e.to_string()))?;
    Ok(s)
}

fn writer_payload(
    ctx: &ScopeContext,
    reference: &ReferenceItem,
    previous: Option<(&SteerSample, &ReviewVerdict)>,
    format_error: Option<&Reject>,
) -> Value {
    let mut p = ctx.base();
    p.insert("refs".into(), json!([reference]));
    if let Some((s, v)) = previous {
        p.insert("previous_sample".into(), sample_json(s));
        p.insert("reviewer_feedback".into(), json!(v.feedback()));
    }
    if let Some(r) = format_error {
        p.insert("format_error".into(), json!(r.0));
    }
    Value::Object(p)
}

/// Asks the writer for one sample built from `reference`. A rejected reply
/// is answered with a rewrite request naming the problem.
pub fn write_sample(
    client: &dyn ChatClient,
    ctx: &ScopeContext,
    reference: &ReferenceItem,
    id: &str,
    cfg: &PipelineConfig,
) -> Result<SteerSample> {
    ask(
        client,
        Role::Writer,
        cfg.parse_retries,
        |last| writer_payload(ctx, reference, None, last),
        |r| draft_to_sample(r, ctx, reference, id),
    )
}

/// Asks for a new version of `previous`, forwarding the reviewer's reasons.
pub fn rewrite_sample(
    client: &dyn ChatClient,
    ctx: &ScopeContext,
    reference: &ReferenceItem,
    previous: &SteerSample,
    verdict: &ReviewVerdict,
    cfg: &PipelineConfig,
) -> Result<SteerSample> {
    ask(
        client,
        Role::Writer,
        cfg.parse_retries,
        |last| writer_payload(ctx, reference, Some((previous, verdict)), last),
        |r| draft_to_sample(r, ctx, reference, &previous.id),
    )
}

/// Scores one sample. The returned `passed` is recomputed from the scores;
/// disagreement with the reviewer's own result is logged.
pub fn review_sample(
    client: &dyn ChatClient,
    sample: &SteerSample,
    ctx: &ScopeContext,
    cfg: &PipelineConfig,
) -> Result<ReviewVerdict> {
    let mut p = ctx.base();
    p.insert("samples_json".into(), json!([sample_json(sample)]));
    let payload = Value::Object(p);
    let v = ask(
        client,
        Role::Reviewer,
        cfg.parse_retries,
        |_| payload.clone(),
        parse::parse_verdict,
    )?;
    if v.is_discrepant() {
        log::warn!(
            "reviewer result for {} says {}, scores give {}",
            sample.id,
            if v.passed { "fail" } else { "pass" },
            if v.passed { "pass" } else { "fail" },
        );
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub category: String,
    pub scope: String,
    pub rewrites: usize,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Drop {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMismatch {
    pub id: String,
    /// 0 for the first draft, `k` for the k-th rewrite.
    pub revision: usize,
    pub reported_pass: bool,
    pub recomputed_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub spec: IssueSpec,
    pub config: PipelineConfig,
    pub categories: Vec<String>,
    pub target: usize,
    pub references: usize,
    pub accepted: usize,
    /// `accepted / references`, 0 when nothing was retrieved.
    pub acceptance_rate: f64,
    pub total_rewrites: usize,
    pub samples: Vec<SampleRecord>,
    pub drops: Vec<Drop>,
    pub shortfalls: Vec<Shortfall>,
    pub dropped_reference_items: usize,
    pub verdict_mismatches: Vec<VerdictMismatch>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub plan: CategoryPlan,
    pub corpus: Corpus,
    pub report: RunReport,
}

enum Outcome {
    Accepted(SteerSample, usize),
    Dropped(String, usize),
}

fn draft_loop(
    client: &dyn ChatClient,
    ctx: &ScopeContext,
    reference: &ReferenceItem,
    id: &str,
    cfg: &PipelineConfig,
    mismatches: &mut Vec<VerdictMismatch>,
) -> Result<Outcome> {
    let unparseable = |e: AutotesterError, rewrites| match e {
        AutotesterError::Parse { role, reason, .. } => Ok(Outcome::Dropped(
            format!("{role} reply unparseable: {reason}"),
            rewrites,
        )),
        other => Err(other),
    };
    let mut sample = match write_sample(client, ctx, reference, id, cfg) {
        Ok(s) => s,
        Err(e) => return unparseable(e, 0),
    };
    let mut rewrites = 0;
    loop {
        let verdict = match review_sample(client, &sample, ctx, cfg) {
            Ok(v) => v,
            Err(e) => return unparseable(e, rewrites),
        };
        if let Some(reported) = verdict.reported_pass.filter(|_| verdict.is_discrepant()) {
            mismatches.push(VerdictMismatch {
                id: id.to_string(),
                revision: rewrites,
                reported_pass: reported,
                recomputed_pass: verdict.passed,
            });
        }
        if verdict.passed {
            return Ok(Outcome::Accepted(sample, rewrites));
        }
        if rewrites == cfg.rewrite_cap {
            return Ok(Outcome::Dropped(
                format!("still failing review after {rewrites} rewrites"),
                rewrites,
            ));
        }
        sample = match rewrite_sample(client, ctx, reference, &sample, &verdict, cfg) {
            Ok(s) => s,
            Err(e) => return unparseable(e, rewrites + 1),
        };
        rewrites += 1;
    }
}

/// Runs analyst, retriever and the writer/reviewer loop over every category,
/// scope and reference, in that order. Samples are numbered
/// `c{category}-s{scope}-r{reference}`.
///
/// Client errors abort the run. Replies that stay unparseable after the
/// retry budget drop the affected sample, except for the analyst, whose
/// failure is fatal.
pub fn run_pipeline(client: &dyn ChatClient, spec: &IssueSpec, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    spec.validate()?;
    cfg.validate()?;
    let plan = analyst_decompose(client, spec, cfg)?;

    let mut accepted = Vec::new();
    let mut samples = Vec::new();
    let mut drops = Vec::new();
    let mut shortfalls = Vec::new();
    let mut mismatches = Vec::new();
    let mut dropped_items = 0;
    let mut references = 0;

    for (ci, (category, _)) in plan.categories.iter().enumerate() {
        let refs = retrieve_refs(client, &spec.issue, &plan, category, spec.refs_per_scope, cfg)?;
        shortfalls.extend(refs.shortfalls);
        dropped_items += refs.dropped_items;
        for (si, (scope, items)) in refs.by_scope.iter().enumerate() {
            let ctx = ScopeContext::new(&spec.issue, &plan, category, scope).expect("scope comes from plan");
            for (ri, reference) in items.iter().enumerate() {
                references += 1;
                let id = format!("c{ci:02}-s{si:02}-r{ri:02}");
                let (ok, rewrites) = match draft_loop(client, &ctx, reference, &id, cfg, &mut mismatches)? {
                    Outcome::Accepted(s, n) => {
                        accepted.push(s);
                        (true, n)
                    }
                    Outcome::Dropped(reason, n) => {
                        log::warn!("dropping {id}: {reason}");
                        drops.push(Drop { id: id.clone(), reason });
                        (false, n)
                    }
                };
                samples.push(SampleRecord {
                    id,
                    category: category.clone(),
                    scope: scope.clone(),
                    rewrites,
                    accepted: ok,
                });
            }
        }
    }

    let mut seen = HashSet::new();
    let scopes = plan
        .categories
        .iter()
        .flat_map(|(_, s)| s.iter().map(|(n, _)| n.clone()))
        .filter(|n| seen.insert(n.clone()))
        .collect();
    let corpus = Corpus {
        issue: spec.issue.clone(),
        categories: plan.category_names(),
        scopes,
        samples: accepted,
    };
    corpus.validate()?;

    let report = RunReport {
        spec: spec.clone(),
        config: *cfg,
        categories: plan.category_names(),
        target: spec.target_samples(),
        references,
        accepted: corpus.samples.len(),
        acceptance_rate: if references == 0 {
            0.0
        } else {
            corpus.samples.len() as f64 / references as f64
        },
        total_rewrites: samples.iter().map(|s| s.rewrites).sum(),
        samples,
        drops,
        shortfalls,
        dropped_reference_items: dropped_items,
        verdict_mismatches: mismatches,
    };
    Ok(PipelineOutput { plan, corpus, report })
}
