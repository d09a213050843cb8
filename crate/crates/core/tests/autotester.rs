// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::criteria::{self, run, scripted, Review};
use proptest::prelude::*;
use serde_json::json;
use steerkit::autotester::{
    analyst_decompose, retrieve_refs, rubric_pass, run_pipeline, AutotesterError, ClientError, IssueSpec,
    PipelineConfig, RecordingClient, ReplayClient, Request, Role, ScriptedClient, SyntheticClient,
};

#[test]
fn all_passing_drafts_fill_the_plan() {
    for (c, s, r) in [(1, 1, 1), (2, 3, 4), (3, 4, 5)] {
        let out = run(&scripted(Review::PassAll), c, s, r);
        assert_eq!(out.corpus.samples.len(), c * s * r);
        assert_eq!(out.report.accepted, c * s * r);
        assert_eq!(out.report.total_rewrites, 0);
        assert_eq!(out.report.acceptance_rate, 1.0);
        assert_eq!(out.corpus.categories.len(), c);
        assert_eq!(out.corpus.scopes.len(), c * s);
        assert!(out.report.drops.is_empty() && out.report.shortfalls.is_empty());
    }
}

#[test]
fn one_failure_costs_one_rewrite_each() {
    let out = run(&scripted(Review::FailFirst), 2, 2, 3);
    assert_eq!(out.corpus.samples.len(), 12);
    assert!(out.report.samples.iter().all(|s| s.accepted && s.rewrites == 1));
    assert_eq!(out.report.total_rewrites, 12);
}

#[test]
fn rewrite_cap_drops_and_reports() {
    let out = run(&scripted(Review::FailAlways("c00-s01-r00")), 2, 2, 2);
    assert_eq!(out.corpus.samples.len(), 7);
    assert_eq!(out.report.drops.len(), 1);
    assert_eq!(out.report.drops[0].id, "c00-s01-r00");
    let rec = out.report.samples.iter().find(|s| s.id == "c00-s01-r00").unwrap();
    assert!(!rec.accepted);
    assert_eq!(rec.rewrites, PipelineConfig::default().rewrite_cap);
}

#[test]
fn gate_matches_mean_rule_on_random_grids() {
    assert_eq!(criteria::gate_disagreements(1000, 1), 0);
}

#[test]
fn gate_boundary_cases() {
    // an axis sum of 5 (mean 5/3) passes, 4 (mean 4/3) fails
    assert!(rubric_pass(&[[2, 2, 1], [2, 2, 2], [1, 2, 2]]));
    assert!(!rubric_pass(&[[2, 2, 1], [2, 1, 1], [2, 2, 2]]));
    assert!(!rubric_pass(&[[0, 2, 2], [2, 2, 2], [2, 2, 2]]));
    assert!(rubric_pass(&[[2; 3]; 3]));
}

#[test]
fn replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let live = run(
        &RecordingClient::new(SyntheticClient::new(3), dir.path()).unwrap(),
        2,
        2,
        3,
    );
    let again = |_: ()| {
        let out = run(&ReplayClient::new(dir.path()).unwrap(), 2, 2, 3);
        (
            serde_json::to_string(&out.corpus.samples).unwrap(),
            out.report.to_json(),
        )
    };
    let (a, b) = (again(()), again(()));
    assert_eq!(a, b);
    assert_eq!(a.0, serde_json::to_string(&live.corpus.samples).unwrap());
    assert_eq!(a.1, live.report.to_json());
}

/// Ten truthfulness categories as an analyst would return them.
fn truthfulness_plan(num_scopes: u64) -> String {
    let names = [
        "Factual Accuracy",
        "Source Reliability Awareness",
        "Hallucination Detection",
        "Contextual Truthfulness",
        "Truth Verification Skills",
        "Misinformation Resistance",
        "Uncertainty Communication",
        "Correction Handling",
        "Knowledge Boundaries",
        "Truth Promotion Impact",
    ];
    let plan: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .map(|n| {
            let scopes: serde_json::Map<String, serde_json::Value> = (0..num_scopes)
                .map(|i| (format!("{n} scope {i}"), json!(format!("Situation {i} probing {n}."))))
                .collect();
            (n.to_string(), serde_json::Value::Object(scopes))
        })
        .collect();
    format!("Here is the plan:\n```json\n{}\n```", serde_json::Value::Object(plan))
}

#[test]
fn truthfulness_plan_contains_factual_accuracy() {
    let client = ScriptedClient::new(|req: &Request<'_>| {
        assert_eq!(req.role, Some(Role::Analyst));
        Ok(truthfulness_plan(req.json["num_of_scope"].as_u64().unwrap()))
    });
    let spec = IssueSpec::new("truthfulness").with_counts(10, 2, 1);
    let plan = analyst_decompose(&client, &spec, &PipelineConfig::default()).unwrap();
    assert!(plan.contains_category("Factual Accuracy"));
    assert_eq!(plan.categories.len(), 10);
}

#[test]
fn duplicate_category_names_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let client = ScriptedClient::new(move |_req: &Request<'_>| {
        let n = seen.fetch_add(1, Ordering::SeqCst);
        Ok(match n {
            0 => r#"{"Factual Accuracy": {"a": "x"}, "Factual Accuracy": {"b": "y"}}"#.to_string(),
            1 => r#"{"Factual Accuracy": {"a": "x"}, "factual accuracy": {"b": "y"}}"#.to_string(),
            _ => r#"{"Factual Accuracy": {"a": "x"}, "Correction Handling": {"b": "y"}}"#.to_string(),
        })
    });
    let spec = IssueSpec::new("truthfulness").with_counts(2, 1, 1);
    let plan = analyst_decompose(&client, &spec, &PipelineConfig::default()).unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(plan.category_names(), vec!["Factual Accuracy", "Correction Handling"]);
}

#[test]
fn single_category_spec() {
    let spec = IssueSpec::new("truthfulness").with_counts(1, 1, 1);
    let plan = analyst_decompose(&scripted(Review::PassAll), &spec, &PipelineConfig::default()).unwrap();
    assert_eq!(plan.categories.len(), 1);
}

#[test]
fn unparseable_analyst_reply_carries_the_transcript() {
    let client = ScriptedClient::new(|_req: &Request<'_>| Ok("I cannot help with that.".into()));
    let spec = IssueSpec::new("truthfulness").with_counts(1, 1, 1);
    match analyst_decompose(&client, &spec, &PipelineConfig::default()) {
        Err(AutotesterError::Parse {
            role,
            attempts,
            transcript,
            ..
        }) => {
            assert_eq!(role, Role::Analyst);
            assert_eq!(attempts, 4);
            assert_eq!(transcript.len(), 4);
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn retriever_shortfall_keeps_what_arrived() {
    let rounds = Arc::new(AtomicUsize::new(0));
    let seen = rounds.clone();
    let client = ScriptedClient::new(move |req: &Request<'_>| {
        if req.role == Some(Role::Analyst) {
            return Ok(r#"{"Cat": {"Scope": "desc"}}"#.into());
        }
        let wanted = req.json["num_of_refs"].as_u64().unwrap();
        let round = seen.fetch_add(1, Ordering::SeqCst);
        let items: Vec<_> = (0..wanted)
            .map(|i| {
                // first round: 7 complete items, then only incomplete ones
                let ok = round == 0 && i < 7;
                json!({ "source": format!("s{round}-{i}"), "context": if ok { "ctx" } else { "" } })
            })
            .collect();
        Ok(json!({ "Scope": items }).to_string())
    });
    let cfg = PipelineConfig::default();
    let spec = IssueSpec::new("truthfulness").with_counts(1, 1, 10);
    let plan = analyst_decompose(&client, &spec, &cfg).unwrap();
    let refs = retrieve_refs(&client, "truthfulness", &plan, "Cat", 10, &cfg).unwrap();
    assert_eq!(refs.by_scope[0].1.len(), 7);
    assert_eq!(refs.shortfalls.len(), 1);
    assert_eq!((refs.shortfalls[0].wanted, refs.shortfalls[0].got), (10, 7));
    assert_eq!(rounds.load(Ordering::SeqCst), cfg.fetch_rounds);
    assert_eq!(refs.dropped_items, 3 + 3 + 3);
}

#[test]
fn client_failure_aborts_the_run() {
    let client = ScriptedClient::new(|req: &Request<'_>| match req.role {
        Some(Role::Analyst) => Ok(r#"{"Cat": {"Scope": "desc"}}"#.into()),
        _ => Err(ClientError::Transport("connection reset".into())),
    });
    let spec = IssueSpec::new("truthfulness").with_counts(1, 1, 1);
    assert!(matches!(
        run_pipeline(&client, &spec, &PipelineConfig::default()),
        Err(AutotesterError::Client(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gate_property(cells in proptest::array::uniform9(0u8..=2)) {
        let grid = [[cells[0], cells[1], cells[2]], [cells[3], cells[4], cells[5]], [cells[6], cells[7], cells[8]]];
        prop_assert_eq!(rubric_pass(&grid), criteria::gate_oracle(&grid));
    }
}
