// SPDX-License-Identifier: MIT OR Apache-2.0

//! Side-by-side α table: one row per (model, algorithm), one column per
//! issue, `-` where a bundle has no profile for the algorithm.

use std::fmt::Write;
use std::path::PathBuf;

use steerkit::algorithms::BUILTIN_ALGORITHMS;
use steerkit::linalg::norm;
use steerkit::store::StrategyBundle;

pub const ABSENT: &str = "-";

fn display_name(id: &str) -> String {
    match id {
        "md" => "MD".into(),
        "lr" => "LR".into(),
        "pca" => "PCA".into(),
        "kmeans" => "Kmeans".into(),
        other => other.to_string(),
    }
}

fn first_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:<w$}", w = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render(bundles: &[(PathBuf, StrategyBundle)]) -> String {
    let models = first_appearance(bundles.iter().map(|(_, b)| b.model_id.as_str()));
    let issues = first_appearance(bundles.iter().map(|(_, b)| b.issue.as_str()));
    let mut algos: Vec<String> = BUILTIN_ALGORITHMS.iter().map(|s| s.to_string()).collect();
    for (_, b) in bundles {
        for p in &b.profiles {
            if !algos.iter().any(|a| a == p.algorithm_id()) {
                algos.push(p.algorithm_id().to_string());
            }
        }
    }

    let mut rows = vec![{
        let mut h = vec!["Model".to_string(), "Algorithm".to_string()];
        h.extend(issues.iter().cloned());
        h
    }];
    for model in &models {
        for (i, algo) in algos.iter().enumerate() {
            let mut row = vec![if i == 0 { model.clone() } else { String::new() }, display_name(algo)];
            for issue in &issues {
                // Last bundle wins when several share a (model, issue) cell.
                let cell = bundles
                    .iter()
                    .rev()
                    .find(|(_, b)| &b.model_id == model && &b.issue == issue)
                    .map(|(_, b)| match b.profile(algo) {
                        Some(p) => format!("{:.4}", p.strength),
                        None => ABSENT.to_string(),
                    })
                    .unwrap_or_default();
                row.push(cell);
            }
            rows.push(row);
        }
    }
    let mut out = table(&rows);

    for (path, b) in bundles {
        let _ = writeln!(out);
        let _ = writeln!(out, "{}", path.display());
        let _ = writeln!(
            out,
            "  model {}  issue {}  layer {}/{}  d {}  tau {}  beta {}",
            b.model_id, b.issue, b.layer, b.num_layers, b.hidden_dim, b.tau, b.beta_default
        );
        let mut rows = vec![vec![
            "  algorithm".to_string(),
            "alpha".into(),
            "assigned".into(),
            "|anchor|".into(),
        ]];
        for algo in &algos {
            let row = match b.profile(algo) {
                Some(p) => vec![
                    format!("  {}", display_name(algo)),
                    format!("{:.4}", p.strength),
                    p.assigned_ids.len().to_string(),
                    format!("{:.4}", norm(&p.anchor)),
                ],
                None if BUILTIN_ALGORITHMS.contains(&algo.as_str()) => vec![
                    format!("  {}", display_name(algo)),
                    ABSENT.into(),
                    "0".into(),
                    ABSENT.into(),
                ],
                None => continue,
            };
            rows.push(row);
        }
        out.push_str(&table(&rows));
    }
    out
}
