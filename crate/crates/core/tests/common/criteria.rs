// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per acceptance criterion. Each returns whether it held plus a
//! short measurement line; the integration tests assert on them and the
//! acceptance runner prints them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::Distribution;
use serde_json::{json, Value};
use steerkit::algorithms::{
    kmeans_vector, lr_vector, md_vector, pca_vector, AlgorithmRegistry, LayerActivations, SteerVector,
};
use steerkit::autotester::{
    parse, rubric_pass, run_pipeline, ChatClient, IssueSpec, PipelineConfig, PipelineOutput, RecordingClient,
    ReplayClient, Request, Role, ScriptedClient, AXES,
};
use steerkit::builder::{aggregate_qr, assign_samples, build_bundle, build_profiles, select_layer, weak_sample_ratio};
use steerkit::eval::{evaluate_accuracy, normalize_ab, Choice};
use steerkit::linalg::Matrix;
use steerkit::planted::PlantedSpec;
use steerkit::runtime::{decide, greedy_decode, match_strategy, LayerTransform, Positions, SteerConfig, SteerHook};
use steerkit::store::{
    load_dataset, read_bundle, save_dataset, write_bundle, ActivationSet, SteerSample, StrategyBundle,
};
use steerkit::toy::{export_activations, ByteCodec, ToyConfig, ToyModel};

use super::*;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// extractors
// ---------------------------------------------------------------------------

pub fn md_matches_oracle() -> (bool, f64) {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(seed);
        let shift = gauss_vec(&mut r, 16, 1.0);
        let (pos, neg) = shifted_pairs(&mut r, 40, &shift, 0.5);
        let got = md_vector(&layer(&pos, &neg)).expect("md");
        let want = md_oracle(&pos, &neg);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    (worst <= 1e-9, worst)
}

pub fn pca_matches_oracle() -> (bool, f64) {
    let mut worst = 1.0f64;
    for seed in 0..20 {
        let (pos, neg) = pca_fixture(100 + seed, 60, 12);
        let got = pca_vector(&layer(&pos, &neg)).expect("pca");
        let want = pca_power_oracle(&pos, &neg);
        worst = worst.min(dot(&got, &want));
    }
    (worst >= 1.0 - 1e-6, worst)
}

pub fn kmeans_matches_oracle() -> (bool, f64) {
    let mut worst = 1.0f64;
    for seed in 0..20 {
        for n_pairs in [3usize, 4, 5, 6] {
            let (pos, neg) = kmeans_fixture(200 + seed, n_pairs, 6);
            let got = kmeans_vector(&layer(&pos, &neg)).expect("kmeans");
            let want = kmeans_exhaustive(&pos, &neg);
            worst = worst.min(dot(&got, &want));
        }
    }
    (worst >= 0.999, worst)
}

/// Seed of the fixed separable fixture.
pub const LR_FIXTURE_SEED: u64 = 7;

pub fn lr_recovers_direction() -> (bool, f64) {
    let (pos, neg, w) = lr_fixture(LR_FIXTURE_SEED);
    let got = lr_vector(&layer(&pos, &neg)).expect("lr");
    let c = dot(&got, &w);
    (c >= 0.95, c)
}

pub fn extractor_oracle_suite() -> Outcome {
    let start = Instant::now();
    let (md_ok, md_err) = md_matches_oracle();
    let (pca_ok, pca_cos) = pca_matches_oracle();
    let (km_ok, km_cos) = kmeans_matches_oracle();
    let (lr_ok, lr_cos) = lr_recovers_direction();
    let took = start.elapsed();
    let fast = took < Duration::from_secs(10);
    Outcome::new(
        md_ok && pca_ok && km_ok && lr_ok && fast,
        format!(
            "md max|Δ|={md_err:.1e} pca min cos={pca_cos:.12} kmeans min cos={km_cos:.6} lr cos={lr_cos:.4} in {:.2}s",
            took.as_secs_f64()
        ),
    )
}

pub type ExtractFn = fn(&LayerActivations) -> Result<Vec<f64>, steerkit::algorithms::ExtractError>;

pub const EXTRACTORS: [(&str, ExtractFn); 4] = [
    ("md", md_vector),
    ("lr", lr_vector),
    ("pca", pca_vector),
    ("kmeans", kmeans_vector),
];

/// Worst unit-norm deviation over the given inputs, and whether a second run
/// reproduced every output bit for bit.
pub fn norm_and_determinism(inputs: &[LayerActivations]) -> (f64, bool, usize) {
    let mut worst = 0.0f64;
    let mut identical = true;
    let mut produced = 0;
    for acts in inputs {
        for (_, f) in EXTRACTORS {
            let (Ok(a), Ok(b)) = (f(acts), f(acts)) else { continue };
            produced += 1;
            worst = worst.max((norm(&a) - 1.0).abs());
            identical &= a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
        }
    }
    (worst, identical, produced)
}

pub fn unit_norm_and_determinism() -> Outcome {
    let mut inputs = Vec::new();
    for seed in 0..25 {
        let mut r = rng(1000 + seed);
        let shift = gauss_vec(&mut r, 10, 0.8);
        let (pos, neg) = shifted_pairs(&mut r, 30, &shift, 1.0);
        inputs.push(layer(&pos, &neg));
        inputs.push(random_layer(2000 + seed, 20, 10));
    }
    let (worst, identical, produced) = norm_and_determinism(&inputs);
    let expected = inputs.len() * EXTRACTORS.len();
    Outcome::new(
        worst <= 1e-9 && identical && produced == expected,
        format!("{produced}/{expected} outputs, max |‖v‖−1|={worst:.1e}, bit-identical reruns: {identical}"),
    )
}

// ---------------------------------------------------------------------------
// weak-sample ratio, assignment, aggregation
// ---------------------------------------------------------------------------

fn single(id: &str, values: Vec<f64>) -> BTreeMap<String, SteerVector> {
    BTreeMap::from([(
        id.to_string(),
        SteerVector {
            algorithm_id: id.to_string(),
            layer: 0,
            values,
        },
    )])
}

/// Three differences with cosines 1, 0 and −1 against a single vector.
pub fn weak_ratio_hand_case() -> f64 {
    let diffs = Matrix::from_rows(&[[2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]]);
    weak_sample_ratio(&diffs, &single("md", vec![1.0, 0.0]), 0.5)
        .expect("valid input")
        .weak_ratio
}

/// Random differences against 1 to 4 random unit vectors.
pub fn random_ratio_fixture(seed: u64) -> (Matrix, BTreeMap<String, SteerVector>) {
    let mut r = rng(seed);
    let d = r.random_range(2..8);
    let n = r.random_range(1..40);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| gauss_vec(&mut r, d, 1.0)).collect();
    let k = r.random_range(1..5);
    let ids = ["md", "lr", "pca", "kmeans"];
    let vectors = (0..k)
        .map(|i| {
            let id = ids[i].to_string();
            let values = random_unit(&mut r, d);
            (
                id.clone(),
                SteerVector {
                    algorithm_id: id,
                    layer: 0,
                    values,
                },
            )
        })
        .collect();
    (Matrix::from_rows(&rows), vectors)
}

/// Whether r(τ) is non-decreasing along an increasing τ grid.
pub fn ratio_monotone(diffs: &Matrix, vectors: &BTreeMap<String, SteerVector>) -> bool {
    let taus: Vec<f64> = (1..40)
        .map(|i| -1.0 + i as f64 * 0.05)
        .filter(|t| *t > 0.0 && *t < 1.0)
        .collect();
    let ratios: Vec<f64> = taus
        .iter()
        .map(|&t| weak_sample_ratio(diffs, vectors, t).expect("valid").weak_ratio)
        .collect();
    ratios.windows(2).all(|w| w[0] <= w[1])
}

pub fn weak_ratio_criterion() -> Outcome {
    let r = weak_ratio_hand_case();
    let monotone = (0..200)
        .filter(|&s| {
            let (d, v) = random_ratio_fixture(3000 + s);
            ratio_monotone(&d, &v)
        })
        .count();
    Outcome::new(
        r == 2.0 / 3.0 && monotone == 200,
        format!("hand case r={r:?}, τ-monotone on {monotone}/200 fixtures"),
    )
}

/// Two samples, one layer, d = 2: negatives [1,0] and [3,0], positives
/// [3,0] and [7,0], steer e₁. Returns (anchor, strength).
pub fn profile_hand_case() -> (Vec<f64>, f64) {
    let acts = ActivationSet::new(
        "hand",
        1,
        2,
        vec!["a".into(), "b".into()],
        vec!["c".into(), "c".into()],
        vec![3.0, 0.0, 7.0, 0.0],
        vec![1.0, 0.0, 3.0, 0.0],
    )
    .expect("valid set");
    let vectors = single("md", vec![1.0, 0.0]);
    let diffs = acts.layer(0).differences();
    let asg = assign_samples(&diffs, acts.sample_ids(), &vectors, 0.3).expect("assign");
    let built = build_profiles(&acts, &asg, &vectors, 0).expect("profiles");
    let p = &built.profiles[0];
    (p.anchor.clone(), p.strength)
}

/// Every id lands in exactly one of the assigned lists or `unmatched`.
pub fn partition_holds(seed: u64) -> bool {
    let (diffs, vectors) = random_ratio_fixture(seed);
    let ids: Vec<String> = (0..diffs.rows()).map(|i| format!("x{i}")).collect();
    let tau = rng(seed ^ 0xabc).random_range(0.01..0.99);
    let asg = assign_samples(&diffs, &ids, &vectors, tau).expect("assign");
    let mut seen = HashSet::new();
    let mut total = 0;
    for id in asg.by_algorithm.values().flatten().chain(&asg.unmatched) {
        total += 1;
        seen.insert(id.clone());
    }
    total == ids.len() && seen.len() == ids.len() && ids.iter().all(|i| seen.contains(i))
}

pub fn profile_criterion() -> Outcome {
    let (anchor, alpha) = profile_hand_case();
    let partitions = (0..200).filter(|&s| partition_holds(4000 + s)).count();
    Outcome::new(
        anchor == [2.0, 0.0] && alpha == 3.0 && partitions == 200,
        format!("u={anchor:?} α={alpha:?}, partition holds on {partitions}/200 fixtures"),
    )
}

pub fn qr_criterion() -> Outcome {
    let mut exact = 0;
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let d = r.random_range(1..20);
        let v = SteerVector {
            algorithm_id: "md".into(),
            layer: 0,
            values: random_unit(&mut r, d),
        };
        let out = aggregate_qr(std::slice::from_ref(&v)).expect("aggregate");
        if out
            .values
            .iter()
            .zip(&v.values)
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            exact += 1;
        }
    }
    let pair = aggregate_qr(&[
        SteerVector {
            algorithm_id: "md".into(),
            layer: 0,
            values: vec![1.0, 0.0],
        },
        SteerVector {
            algorithm_id: "md".into(),
            layer: 0,
            values: vec![0.0, 1.0],
        },
    ])
    .expect("aggregate");
    let err = (pair.values[0] - 1.0).abs().max(pair.values[1].abs());
    Outcome::new(
        exact == 100 && err <= 1e-9,
        format!("single vector exact {exact}/100, [e₁,e₂] → e₁ error {err:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// layer selection
// ---------------------------------------------------------------------------

pub fn planted_layer_selection() -> Outcome {
    let registry = AlgorithmRegistry::new();
    let start = Instant::now();
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..100 {
        let acts = PlantedSpec::single_direction(5, seed).generate().expect("planted");
        match select_layer(&acts, &registry, 0.3) {
            Ok(sel) if sel.layer == 5 => hits += 1,
            Ok(sel) => misses.push(format!("seed {seed} → {}", sel.layer)),
            Err(e) => misses.push(format!("seed {seed}: {e}")),
        }
    }
    let took = start.elapsed();
    Outcome::new(
        hits == 100 && took < Duration::from_secs(30),
        format!(
            "l*=5 in {hits}/100 trials in {:.2}s{}",
            took.as_secs_f64(),
            if misses.is_empty() {
                String::new()
            } else {
                format!(" ({})", misses.join(", "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// toy transformer
// ---------------------------------------------------------------------------

pub fn toy_samples(n: usize) -> Vec<SteerSample> {
    const TOPICS: [&str; 6] = [
        "the moon",
        "vaccines",
        "goldfish",
        "lightning",
        "the great wall",
        "sugar",
    ];
    (0..n)
        .map(|i| SteerSample {
            id: format!("t{i:03}"),
            question: format!(
                "Is it true that {} {}?",
                TOPICS[i % TOPICS.len()],
                [
                    "is made of cheese",
                    "causes it",
                    "has a short memory",
                    "never strikes twice"
                ][i % 4]
            ),
            matching_behavior: [
                "No, that is a myth.",
                "I don't think so; the evidence says otherwise.",
                "That is not accurate.",
            ][i % 3]
                .to_string(),
            not_matching_behavior: [
                "Yes, absolutely.",
                "Of course, everyone knows that.",
                "Definitely true.",
            ][i % 3]
                .to_string(),
            category: ["myths", "science"][i % 2].to_string(),
            scope: format!("scope {}", i % 3),
            source: "toy".into(),
        })
        .collect()
}

pub struct ToySetup {
    pub model: ToyModel,
    pub samples: Vec<SteerSample>,
    pub bundle: StrategyBundle,
}

pub fn toy_setup() -> ToySetup {
    let model = ToyModel::new(ToyConfig::default()).expect("toy model");
    let samples = toy_samples(48);
    let acts = export_activations(&model, &samples).expect("export");
    let bundle = build_bundle(&acts, &AlgorithmRegistry::new(), 0.3)
        .expect("bundle")
        .bundle;
    ToySetup { model, samples, bundle }
}

pub const TOY_PROMPTS: [&str; 4] = [
    "Is it true that goldfish forget everything?",
    "Do we only use ten percent of our brains?",
    "Q: Can you see the wall from space?\nA:",
    "Tell me about sugar and hyperactivity.",
];

/// Any-match steering config at multiplier `beta`.
pub fn always(beta: f64, positions: Positions) -> SteerConfig {
    SteerConfig {
        beta,
        match_threshold: -1.0,
        positions,
    }
}

/// Largest |(steered − base) − α·β·v| over every position and prompt at l*,
/// and the number of hooked positions inspected.
pub fn injection_error(setup: &ToySetup, betas: &[f64]) -> (f64, usize) {
    let codec = ByteCodec::for_model(&setup.model);
    let l = setup.bundle.layer;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for text in TOY_PROMPTS {
        let prompt = codec.encode(text);
        let base = setup.model.forward(&prompt, None).expect("forward");
        for &beta in betas {
            let decision = decide(
                &setup.model,
                &prompt,
                &setup.bundle,
                &always(beta, Positions::AllPositions),
            )
            .expect("decide");
            let id = decision.chosen.clone().expect("threshold −1 always matches");
            let p = setup.bundle.profile(&id).expect("chosen profile");
            let hook = SteerHook::new(&decision, &setup.bundle, Positions::AllPositions, prompt.len())
                .expect("hook")
                .expect("a match installs a hook");
            let steered = setup
                .model
                .forward(&prompt, Some(&hook as &dyn LayerTransform))
                .expect("forward");
            for pos in 0..prompt.len() {
                let (s, b) = (steered.layer_output(l, pos), base.layer_output(l, pos));
                for k in 0..s.len() {
                    let want = p.strength * beta * p.steer.values[k];
                    let got = f64::from(s[k]) - f64::from(b[k]);
                    worst = worst.max((got - want).abs());
                }
                checked += 1;
            }
        }
    }
    (worst, checked)
}

/// Prompts whose β=0 steered decode differs from the unhooked decode.
pub fn beta_zero_mismatches(setup: &ToySetup, prompts: &[&str], max_new: usize) -> usize {
    let codec = ByteCodec::for_model(&setup.model);
    prompts
        .iter()
        .filter(|text| {
            let prompt = codec.encode(text);
            let base = greedy_decode(&setup.model, &prompt, max_new, None).expect("decode");
            let decision = decide(
                &setup.model,
                &prompt,
                &setup.bundle,
                &always(0.0, Positions::AllPositions),
            )
            .expect("decide");
            let hook = SteerHook::new(&decision, &setup.bundle, Positions::AllPositions, prompt.len()).expect("hook");
            let steered = greedy_decode(
                &setup.model,
                &prompt,
                max_new,
                hook.as_ref().map(|h| h as &dyn LayerTransform),
            )
            .expect("decode");
            steered != base
        })
        .count()
}

/// Largest deviation of Δ⟨h, v⟩/Δβ from α at the injection point (last
/// prompt position, layer l*) over a β grid.
pub fn projection_slope_error(setup: &ToySetup) -> f64 {
    let codec = ByteCodec::for_model(&setup.model);
    let l = setup.bundle.layer;
    let betas = [0.0, 1.0, 2.0, 4.0];
    let mut worst = 0.0f64;
    for text in TOY_PROMPTS {
        let prompt = codec.encode(text);
        let last = prompt.len() - 1;
        let mut proj = Vec::new();
        let mut alpha = 0.0;
        let mut v = Vec::new();
        for &beta in &betas {
            let decision = decide(
                &setup.model,
                &prompt,
                &setup.bundle,
                &always(beta, Positions::AllPositions),
            )
            .expect("decide");
            let p = setup
                .bundle
                .profile(decision.chosen.as_deref().expect("match"))
                .expect("profile");
            alpha = p.strength;
            v = p.steer.values.clone();
            let hook = SteerHook::new(&decision, &setup.bundle, Positions::AllPositions, prompt.len()).expect("hook");
            let trace = setup
                .model
                .forward(&prompt, hook.as_ref().map(|h| h as &dyn LayerTransform))
                .expect("forward");
            let h: Vec<f64> = trace.layer_output(l, last).iter().map(|&x| f64::from(x)).collect();
            proj.push(dot(&h, &v) / norm(&v));
        }
        for i in 1..betas.len() {
            let slope = (proj[i] - proj[0]) / (betas[i] - betas[0]);
            worst = worst.max((slope - alpha * norm(&v)).abs());
        }
    }
    worst
}

pub fn injection_criterion() -> Outcome {
    let setup = toy_setup();
    let (err, checked) = injection_error(&setup, &[0.5, 1.0, 2.0]);
    let prompts: Vec<&str> = TOY_PROMPTS.to_vec();
    let mismatched = beta_zero_mismatches(&setup, &prompts, 16);
    let slope = projection_slope_error(&setup);
    Outcome::new(
        err <= 1e-6 && mismatched == 0 && slope <= 1e-6,
        format!(
            "l*={} max injection error {err:.2e} over {checked} positions, β=0 decode mismatches {mismatched}/{}, slope error {slope:.2e}",
            setup.bundle.layer,
            prompts.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// adaptive selection
// ---------------------------------------------------------------------------

pub fn two_concept_bundle(seed: u64) -> StrategyBundle {
    let acts = PlantedSpec::two_concepts(seed).generate().expect("planted");
    let registry = AlgorithmRegistry::new().subset(&["md", "pca"]).expect("subset");
    build_bundle(&acts, &registry, 0.3).expect("bundle").bundle
}

/// Worst |cos| between two distinct profiles' steer vectors.
pub fn max_steer_overlap(bundle: &StrategyBundle) -> f64 {
    let mut worst = 0.0f64;
    for (i, a) in bundle.profiles.iter().enumerate() {
        for b in &bundle.profiles[i + 1..] {
            worst = worst.max(cos(&a.steer.values, &b.steer.values).abs());
        }
    }
    worst
}

/// Probes drawn around each anchor (noise 5% of the anchor norm per
/// coordinate); returns (correct, total).
pub fn probes_select_own(bundle: &StrategyBundle, per_profile: usize, seed: u64) -> (usize, usize) {
    let mut r = rng(seed);
    let cfg = SteerConfig::default();
    let mut correct = 0;
    let mut total = 0;
    for p in &bundle.profiles {
        let sd = 0.05 * norm(&p.anchor);
        let noise = normal(0.0, sd);
        for _ in 0..per_profile {
            let h: Vec<f64> = p.anchor.iter().map(|a| a + noise.sample(&mut r)).collect();
            let d = match_strategy(&h, bundle, &cfg).expect("match");
            total += 1;
            if d.chosen.as_deref() == Some(p.algorithm_id()) {
                correct += 1;
            }
        }
    }
    (correct, total)
}

/// Whether rescaling every anchor by its own positive factor leaves the
/// chosen strategy unchanged for `trials` random probes.
pub fn anchor_scaling_invariant(bundle: &StrategyBundle, trials: usize, seed: u64) -> bool {
    let mut r = rng(seed);
    let cfg = SteerConfig::default();
    (0..trials).all(|_| {
        let h = gauss_vec(&mut r, bundle.hidden_dim, 4.0);
        let before = match_strategy(&h, bundle, &cfg).expect("match").chosen;
        let mut scaled = bundle.clone();
        for p in &mut scaled.profiles {
            let c = 10f64.powf(r.random_range(-2.0..2.0));
            p.anchor.iter_mut().for_each(|x| *x *= c);
        }
        let after = match_strategy(&h, &scaled, &cfg).expect("match").chosen;
        before == after
    })
}

pub fn adaptive_criterion() -> Outcome {
    let bundle = two_concept_bundle(0);
    let overlap = max_steer_overlap(&bundle);
    let (correct, total) = probes_select_own(&bundle, 100, 6000);
    let invariant = anchor_scaling_invariant(&bundle, 200, 6001);
    Outcome::new(
        bundle.profiles.len() >= 2 && overlap <= 0.1 && correct == total && invariant,
        format!(
            "{} profiles, max |cos| {overlap:.2e}, probes {correct}/{total} to own strategy, scaling invariant: {invariant}",
            bundle.profiles.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// sample generation pipeline
// ---------------------------------------------------------------------------

/// How the scripted reviewer treats drafts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Review {
    PassAll,
    /// Fail the first review of every sample, pass afterwards.
    FailFirst,
    /// Fail every review of this sample id, pass everything else.
    FailAlways(&'static str),
}

fn verdict(id: &Value, pass: bool) -> Value {
    let mut score = serde_json::Map::new();
    for (axis, subs) in AXES.iter() {
        let mut m = serde_json::Map::new();
        for (i, sub) in subs.iter().enumerate() {
            let s = if !pass && i == 0 { 0 } else { 2 };
            m.insert(
                sub.to_string(),
                json!({ "score": s, "reason": format!("{sub} scored {s}") }),
            );
        }
        score.insert(axis.to_string(), Value::Object(m));
    }
    json!([{ "id": id, "result": if pass { "Pass" } else { "Fail" }, "score": score }])
}

/// Mock that follows the reply schemas in the prompt templates; replies are a
/// pure function of the request plus per-sample review counters.
pub fn scripted(review: Review) -> ScriptedClient {
    let seen: Arc<Mutex<HashMap<String, usize>>> = Arc::default();
    ScriptedClient::new(move |req: &Request<'_>| {
        let v = &req.json;
        let reply = match req.role.expect("known system prompt") {
            Role::Analyst => {
                let mut plan = serde_json::Map::new();
                for c in 0..v["num_of_cat"].as_u64().unwrap() {
                    let mut scopes = serde_json::Map::new();
                    for s in 0..v["num_of_scope"].as_u64().unwrap() {
                        scopes.insert(
                            format!("Scope {c}-{s}"),
                            json!(format!("Cases of kind {s} under category {c}.")),
                        );
                    }
                    plan.insert(format!("Category {c}"), Value::Object(scopes));
                }
                Value::Object(plan)
            }
            Role::Retriever => {
                let scope = v["scope"].as_str().unwrap();
                let items: serde_json::Map<String, Value> = (0..v["num_of_refs"].as_u64().unwrap())
                    .map(|i| {
                        (
                            (i + 1).to_string(),
                            json!({ "source": format!("ref://{scope}/{i}"), "context": format!("Context {i} for {scope}.") }),
                        )
                    })
                    .collect();
                json!({ scope: items })
            }
            Role::Writer => {
                let scope = v["scope"].as_str().unwrap();
                let r = &v["refs"][0];
                json!({ scope: { "1": {
                    "question": format!("Question about: {}", r["context"].as_str().unwrap()),
                    "matching_behavior": "I am not certain; here is what the evidence shows.",
                    "not_matching_behavior": "Yes, that is definitely true.",
                    "source": r["source"],
                }}})
            }
            Role::Reviewer => {
                let id = v["samples_json"][0]["id"].clone();
                let key = id.as_str().unwrap().to_string();
                let mut seen = seen.lock().unwrap();
                let n = seen.entry(key.clone()).or_insert(0);
                *n += 1;
                let pass = match review {
                    Review::PassAll => true,
                    Review::FailFirst => *n > 1,
                    Review::FailAlways(bad) => key != bad,
                };
                verdict(&id, pass)
            }
        };
        Ok(serde_json::to_string(&reply).unwrap())
    })
}

pub fn run(client: &dyn ChatClient, c: usize, s: usize, r: usize) -> PipelineOutput {
    let spec = IssueSpec::new("truthfulness").with_counts(c, s, r);
    run_pipeline(client, &spec, &PipelineConfig::default()).expect("pipeline")
}

/// The pass rule restated from its definition: every axis mean ≥ 1.5.
pub fn gate_oracle(grid: &[[u8; 3]; 3]) -> bool {
    grid.iter()
        .all(|axis| axis.iter().map(|&s| f64::from(s)).sum::<f64>() / 3.0 >= 1.5)
}

pub fn reviewer_reply(grid: &[[u8; 3]; 3], claimed: bool) -> String {
    let mut score = serde_json::Map::new();
    for (a, (axis, subs)) in AXES.iter().enumerate() {
        let m: serde_json::Map<String, Value> = subs
            .iter()
            .enumerate()
            .map(|(i, sub)| (sub.to_string(), json!({ "score": grid[a][i], "reason": "r" })))
            .collect();
        score.insert(axis.to_string(), Value::Object(m));
    }
    json!([{ "id": "x", "result": if claimed { "Pass" } else { "Fail" }, "score": score }]).to_string()
}

/// Grids where the library gate (direct and through reply parsing) disagrees
/// with the oracle.
pub fn gate_disagreements(count: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..count)
        .filter(|_| {
            let mut grid = [[0u8; 3]; 3];
            grid.iter_mut().flatten().for_each(|s| *s = r.random_range(0..=2));
            let want = gate_oracle(&grid);
            let claimed = coin(&mut r);
            let parsed = parse::parse_verdict(&reviewer_reply(&grid, claimed)).expect("well-formed verdict");
            rubric_pass(&grid) != want || parsed.passed != want
        })
        .count()
}

pub fn autotester_criterion() -> Outcome {
    let (c, s, r) = (3, 4, 5);
    let all = run(&scripted(Review::PassAll), c, s, r);
    let exact = all.corpus.samples.len() == c * s * r;

    let bad = "c01-s02-r03";
    let capped = run(&scripted(Review::FailAlways(bad)), c, s, r);
    let drop_reported = capped.corpus.samples.len() == c * s * r - 1
        && capped.report.drops.iter().any(|d| d.id == bad)
        && capped
            .report
            .samples
            .iter()
            .any(|x| x.id == bad && !x.accepted && x.rewrites == 3);

    let disagreements = gate_disagreements(1000, 7000);

    let dir = tempfile::tempdir().expect("tempdir");
    let recorded = run(
        &RecordingClient::new(scripted(Review::FailFirst), dir.path()).expect("recorder"),
        2,
        2,
        2,
    );
    let replay = |_: ()| {
        let out = run(&ReplayClient::new(dir.path()).expect("replay"), 2, 2, 2);
        (
            serde_json::to_string(&out.corpus.samples).unwrap(),
            out.report.to_json(),
        )
    };
    let (a, b) = (replay(()), replay(()));
    let replays_identical = a == b && a.1 == recorded.report.to_json();

    Outcome::new(
        exact && drop_reported && disagreements == 0 && replays_identical,
        format!(
            "{}/{} samples, rewrite-cap drop reported: {drop_reported}, gate disagreements {disagreements}/1000, replays identical: {replays_identical}",
            all.corpus.samples.len(),
            c * s * r
        ),
    )
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

pub fn ab_imbalance(n: usize, seed: u64) -> usize {
    let items = normalize_ab(&toy_samples(n), seed);
    let a = items.iter().filter(|i| i.correct == Choice::A).count();
    a.abs_diff(n - a)
}

pub fn eval_criterion() -> Outcome {
    let worst = (1..=100)
        .flat_map(|n| (0..3).map(move |seed| ab_imbalance(n, seed)))
        .max()
        .unwrap_or(0);
    let setup = toy_setup();
    let codec = ByteCodec::for_model(&setup.model);
    let items = normalize_ab(&setup.samples, 0);
    let base = evaluate_accuracy(&setup.model, &codec, &items, None, &SteerConfig::default()).expect("eval");
    let zero = evaluate_accuracy(
        &setup.model,
        &codec,
        &items,
        Some(&setup.bundle),
        &always(0.0, Positions::AllPositions),
    )
    .expect("eval");
    let same_scores = base
        .records
        .iter()
        .zip(&zero.records)
        .all(|(x, y)| x.score_a == y.score_a && x.score_b == y.score_b);
    Outcome::new(
        worst <= 1 && base.accuracy == zero.accuracy && same_scores,
        format!(
            "max |#A−#B| {worst} over sizes 1..100, accuracy base {} vs β=0 {}, identical scores: {same_scores}",
            base.accuracy, zero.accuracy
        ),
    )
}

// ---------------------------------------------------------------------------
// storage
// ---------------------------------------------------------------------------

const TEXT_PIECES: [&str; 8] = [
    "plain",
    "with \"quotes\"",
    "multi\nline",
    "tab\there",
    "ünïcödé ✓",
    "back\\slash",
    "#hash",
    "= sign",
];

pub fn random_dataset(seed: u64) -> (Vec<SteerSample>, ActivationSet) {
    let mut r = rng(seed);
    let n = r.random_range(1..8);
    let l = r.random_range(1..5);
    let d = r.random_range(1..7);
    let cats = ["alpha", "beta gamma", "δ"];
    let samples: Vec<SteerSample> = (0..n)
        .map(|i| SteerSample {
            id: format!("id-{seed}-{i}"),
            question: format!("{} {i}", TEXT_PIECES[r.random_range(0..TEXT_PIECES.len())]),
            matching_behavior: format!("yes {}", TEXT_PIECES[r.random_range(0..TEXT_PIECES.len())]),
            not_matching_behavior: format!("no {}", TEXT_PIECES[r.random_range(0..TEXT_PIECES.len())]),
            category: cats[r.random_range(0..cats.len())].to_string(),
            scope: format!("scope {}", r.random_range(0..3)),
            source: TEXT_PIECES[r.random_range(0..TEXT_PIECES.len())].to_string(),
        })
        .collect();
    let tensor = |r: &mut ChaCha8Rng| -> Vec<f32> {
        (0..n * l * d)
            .map(|_| match r.random_range(0..10) {
                0 => 0.0,
                1 => -0.0,
                2 => f32::MIN_POSITIVE / 4.0,
                3 => r.random_range(-1e30f32..1e30),
                _ => gauss(r) as f32,
            })
            .collect()
    };
    let pos = tensor(&mut r);
    let neg = tensor(&mut r);
    let acts = ActivationSet::new(
        format!("model-{seed}"),
        l,
        d,
        samples.iter().map(|s| s.id.clone()).collect(),
        samples.iter().map(|s| s.category.clone()).collect(),
        pos,
        neg,
    )
    .expect("valid set")
    .with_issue(TEXT_PIECES[seed as usize % TEXT_PIECES.len()])
    .with_extraction_mode("synthetic");
    (samples, acts)
}

pub fn random_bundle(seed: u64) -> StrategyBundle {
    let mut r = rng(seed);
    let d = r.random_range(1..10);
    let num_layers = r.random_range(1..6);
    let layer = r.random_range(0..num_layers);
    let ids = ["md", "lr", "pca", "kmeans", "custom-1"];
    let k = r.random_range(1..=ids.len());
    let mut next = 0;
    let profiles = ids[..k]
        .iter()
        .map(|id| {
            let assigned = (0..r.random_range(1..4))
                .map(|_| {
                    next += 1;
                    format!("s{next}")
                })
                .collect();
            steerkit::store::StrategyProfile {
                steer: SteerVector {
                    algorithm_id: id.to_string(),
                    layer,
                    values: random_unit(&mut r, d),
                },
                anchor: gauss_vec(&mut r, d, 10.0),
                strength: gauss(&mut r) * 3.0,
                assigned_ids: assigned,
            }
        })
        .collect();
    StrategyBundle {
        model_id: format!("model {seed}"),
        issue: TEXT_PIECES[seed as usize % TEXT_PIECES.len()].to_string(),
        num_layers,
        layer,
        hidden_dim: d,
        tau: r.random_range(0.01..0.99),
        beta_default: r.random_range(0.0..3.0),
        profiles,
    }
    .quantized()
}

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("read dir")
        .map(|e| {
            let e = e.expect("entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("read"),
            )
        })
        .collect()
}

/// save → load → save gives identical files and an equal value.
pub fn dataset_round_trips(seed: u64) -> bool {
    let (samples, acts) = random_dataset(seed);
    let tmp = tempfile::tempdir().expect("tempdir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    save_dataset(&samples, &acts, &a).expect("save");
    let (s2, acts2) = load_dataset(&a).expect("load");
    save_dataset(&s2, &acts2, &b).expect("save again");
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    s2 == samples
        && bits(acts2.pos_data()) == bits(acts.pos_data())
        && bits(acts2.neg_data()) == bits(acts.neg_data())
        && acts2.sample_ids() == acts.sample_ids()
        && acts2.categories() == acts.categories()
        && acts2.issue() == acts.issue()
        && acts2.model_id() == acts.model_id()
        && dir_bytes(&a) == dir_bytes(&b)
}

pub fn bundle_round_trips(seed: u64) -> bool {
    let bundle = random_bundle(seed);
    let mut first = Vec::new();
    write_bundle(&bundle, &mut first).expect("write");
    let back = read_bundle(&first).expect("read");
    let mut second = Vec::new();
    write_bundle(&back, &mut second).expect("write again");
    back == bundle && first == second
}

pub fn serialization_criterion() -> Outcome {
    let datasets = (0..100).filter(|&s| dataset_round_trips(8000 + s)).count();
    let bundles = (0..100).filter(|&s| bundle_round_trips(9000 + s)).count();
    Outcome::new(
        datasets == 100 && bundles == 100,
        format!("datasets {datasets}/100, bundles {bundles}/100 byte-exact"),
    )
}

pub type Criterion = (&'static str, fn() -> Outcome);

/// Every criterion in order, with its label.
pub fn all() -> Vec<Criterion> {
    vec![
        ("extractor oracle suite", extractor_oracle_suite),
        ("unit norm and determinism", unit_norm_and_determinism),
        ("weak-sample ratio", weak_ratio_criterion),
        ("planted layer selection", planted_layer_selection),
        ("anchor and strength", profile_criterion),
        ("QR aggregation", qr_criterion),
        ("injection exactness", injection_criterion),
        ("adaptive selection", adaptive_criterion),
        ("sample generation with scripted mock", autotester_criterion),
        ("A/B balance and β=0 evaluation", eval_criterion),
        ("serialization round-trips", serialization_criterion),
    ]
}
