// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steer-sample generation with four cooperating agents: an analyst splits an
//! issue into categories and scopes, a retriever collects references per
//! scope, a writer turns each reference into a contrastive QA sample and a
//! reviewer scores it. Drafts that fail review are rewritten a bounded number
//! of times.
//!
//! All agent traffic goes through [`client::ChatClient`]; nothing here does
//! network I/O.

pub mod client;
pub mod parse;
pub mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    request_key, ChatClient, ClientError, RecordingClient, ReplayClient, Request, ScriptedClient, SyntheticClient,
    TranscriptClient,
};
pub use pipeline::{
    analyst_decompose, retrieve_refs, review_sample, rewrite_sample, run_pipeline, write_sample, Drop, PipelineConfig,
    PipelineOutput, RetrievedRefs, RunReport, SampleRecord, ScopeContext, Shortfall, VerdictMismatch,
};

pub const ANALYST_PROMPT: &str = include_str!("../../prompts/analyst.txt");
pub const RETRIEVER_PROMPT: &str = include_str!("../../prompts/retriever.txt");
pub const WRITER_PROMPT: &str = include_str!("../../prompts/writer.txt");
pub const REVIEWER_PROMPT: &str = include_str!("../../prompts/reviewer.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Analyst,
    Retriever,
    Writer,
    Reviewer,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Analyst, Role::Retriever, Role::Writer, Role::Reviewer];

    pub fn system_prompt(self) -> &'static str {
        match self {
            Role::Analyst => ANALYST_PROMPT,
            Role::Retriever => RETRIEVER_PROMPT,
            Role::Writer => WRITER_PROMPT,
            Role::Reviewer => REVIEWER_PROMPT,
        }
    }

    /// Recognises one of the shipped templates.
    pub fn from_system_prompt(system: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.system_prompt() == system)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Analyst => "analyst",
            Role::Retriever => "retriever",
            Role::Writer => "writer",
            Role::Reviewer => "reviewer",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum AutotesterError {
    #[error("invalid issue spec: {0}")]
    InvalidSpec(String),
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    /// Every attempt was rejected. `transcript` holds the raw replies.
    #[error("{role} reply rejected after {attempts} attempts: {reason}")]
    Parse {
        role: Role,
        attempts: usize,
        reason: String,
        transcript: Vec<String>,
    },
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}

pub type Result<T, E = AutotesterError> = std::result::Result<T, E>;

/// What to generate: `num_categories × scopes_per_category × refs_per_scope`
/// samples when every draft passes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueSpec {
    pub issue: String,
    pub num_categories: usize,
    pub scopes_per_category: usize,
    pub refs_per_scope: usize,
}

impl IssueSpec {
    pub fn new(issue: impl Into<String>) -> Self {
        Self {
            issue: issue.into(),
            num_categories: 10,
            scopes_per_category: 10,
            refs_per_scope: 10,
        }
    }

    pub fn with_counts(mut self, categories: usize, scopes: usize, refs: usize) -> Self {
        self.num_categories = categories;
        self.scopes_per_category = scopes;
        self.refs_per_scope = refs;
        self
    }

    pub fn target_samples(&self) -> usize {
        self.num_categories * self.scopes_per_category * self.refs_per_scope
    }

    pub fn validate(&self) -> Result<()> {
        if self.issue.trim().is_empty() {
            return Err(AutotesterError::InvalidSpec("empty issue".into()));
        }
        for (name, n) in [
            ("num_categories", self.num_categories),
            ("scopes_per_category", self.scopes_per_category),
            ("refs_per_scope", self.refs_per_scope),
        ] {
            if n == 0 {
                return Err(AutotesterError::InvalidSpec(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Categories in reply order, each with its `(scope, description)` list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryPlan {
    pub categories: Vec<(String, Vec<(String, String)>)>,
}

impl CategoryPlan {
    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn scopes(&self, category: &str) -> Option<&[(String, String)]> {
        self.categories
            .iter()
            .find(|(c, _)| c == category)
            .map(|(_, s)| s.as_slice())
    }

    pub fn contains_category(&self, name: &str) -> bool {
        self.categories.iter().any(|(c, _)| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceItem {
    pub source: String,
    pub context: String,
}

/// Reviewer axes and their sub-aspects, in rubric order.
pub const AXES: [(&str, [&str; 3]); 3] = [
    ("Relevance", ["IssueAlignment", "CatCoverage", "ScopeSpecificity"]),
    ("Steerability", ["SignalClarity", "DirectionalStrength", "Uniqueness"]),
    (
        "Learnability",
        ["PromptClarity", "LabelCorrectness", "StructuralQuality"],
    ),
];

/// Minimum per-axis mean for a pass.
pub const PASS_MEAN: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubScore {
    pub name: String,
    pub score: u8,
    pub reason: String,
}

/// The rubric gate on integer sub-scores: each axis sum `s` must satisfy
/// `s / 3 >= 1.5`, evaluated exactly as `2 s >= 9`.
pub fn rubric_pass(scores: &[[u8; 3]; 3]) -> bool {
    scores.iter().all(|axis| {
        let sum: u32 = axis.iter().map(|&s| u32::from(s)).sum();
        2 * sum >= 9
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    /// `scores[axis][sub]`, following [`AXES`].
    pub scores: Vec<Vec<SubScore>>,
    /// Recomputed from `scores`.
    pub passed: bool,
    /// What the reviewer wrote in `result`, if anything.
    pub reported_pass: Option<bool>,
}

impl ReviewVerdict {
    pub fn from_scores(scores: Vec<Vec<SubScore>>, reported_pass: Option<bool>) -> Self {
        let grid = grid_of(&scores);
        Self {
            passed: rubric_pass(&grid),
            scores,
            reported_pass,
        }
    }

    pub fn grid(&self) -> [[u8; 3]; 3] {
        grid_of(&self.scores)
    }

    pub fn axis_means(&self) -> [f64; 3] {
        self.grid().map(|a| a.iter().map(|&s| f64::from(s)).sum::<f64>() / 3.0)
    }

    /// True when the reviewer's own result disagrees with the recomputed one.
    pub fn is_discrepant(&self) -> bool {
        self.reported_pass.is_some_and(|r| r != self.passed)
    }

    /// Sub-aspects below full marks with their reasons, for the rewrite request.
    pub fn feedback(&self) -> Vec<String> {
        let mut out = Vec::new();
        for ((axis, _), row) in AXES.iter().zip(&self.scores) {
            for s in row {
                if s.score < 2 {
                    out.push(format!("{axis}.{} = {}: {}", s.name, s.score, s.reason));
                }
            }
        }
        out
    }
}

fn grid_of(scores: &[Vec<SubScore>]) -> [[u8; 3]; 3] {
    let mut g = [[0u8; 3]; 3];
    for (a, row) in scores.iter().take(3).enumerate() {
        for (s, sub) in row.iter().take(3).enumerate() {
            g[a][s] = sub.score;
        }
    }
    g
}
