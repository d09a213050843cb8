// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use steerkit::algorithms::AlgorithmRegistry;
use steerkit::autotester::{
    run_pipeline, ChatClient, IssueSpec, PipelineConfig, RecordingClient, ReplayClient, SyntheticClient,
    TranscriptClient,
};
use steerkit::builder::{build_bundle, build_bundle_at_layer};
use steerkit::eval::{self, ABItem, StrengthMode};
use steerkit::planted::{placeholder_samples, PlantedSpec};
use steerkit::runtime::{self, SteerConfig};
use steerkit::store::{self, StrategyBundle};
use steerkit::toy::{export_activations, ByteCodec, ToyModel};

use crate::args::*;
use crate::error::CliError;
use crate::inspect;
use crate::live::{LiveClient, LiveConfig};

pub const CLIENT_CONFIG_ENV: &str = "MASTEER_CLIENT_CONFIG";

/// Files a command read and wrote, for the run manifest.
#[derive(Debug, Default)]
pub struct Touched {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub fn run(cmd: &Command) -> Result<Touched, CliError> {
    match cmd {
        Command::GenSamples(a) => gen_samples(a),
        Command::ToyExtract(a) => toy_extract(a),
        Command::Build(a) => build(a),
        Command::Steer(a) => steer(a),
        Command::Eval(a) => evaluate(a),
        Command::SweepStrength(a) => sweep_strength(a),
        Command::SweepLayers(a) => sweep_layers(a),
        Command::Inspect(a) => inspect_bundles(a),
        Command::Plant(a) => plant(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested".into())),
    }
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

enum ClientSpec {
    Mock(PathBuf),
    Live(PathBuf),
    Synthetic(u64),
}

fn parse_client(spec: &str) -> Result<ClientSpec, CliError> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "mock" if !rest.is_empty() => Ok(ClientSpec::Mock(rest.into())),
        "live" if !rest.is_empty() => Ok(ClientSpec::Live(rest.into())),
        "live" => std::env::var_os(CLIENT_CONFIG_ENV)
            .map(|p| ClientSpec::Live(p.into()))
            .ok_or_else(|| CliError::Usage(format!("`--client live` needs a config path or {CLIENT_CONFIG_ENV}"))),
        "synthetic" => rest
            .parse()
            .map(ClientSpec::Synthetic)
            .map_err(|_| CliError::Usage(format!("bad synthetic seed `{rest}`"))),
        _ => Err(CliError::Usage(format!(
            "unknown client `{spec}`; expected mock:<dir>, live:<config> or synthetic:<seed>"
        ))),
    }
}

fn gen_samples(a: &GenSamplesArgs) -> Result<Touched, CliError> {
    let mut t = Touched::default();
    let base: Box<dyn ChatClient> = match parse_client(&a.client)? {
        ClientSpec::Mock(dir) => {
            t.inputs.push(dir.clone());
            Box::new(ReplayClient::new(dir)?)
        }
        ClientSpec::Live(cfg) => {
            t.inputs.push(cfg.clone());
            Box::new(LiveClient::new(LiveConfig::load(&cfg)?))
        }
        ClientSpec::Synthetic(seed) => Box::new(SyntheticClient::new(seed)),
    };
    let base: Box<dyn ChatClient> = match &a.record {
        Some(dir) => Box::new(RecordingClient::new(base, dir.clone())?),
        None => base,
    };
    let transcript = a
        .transcript
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".transcript.jsonl"));
    if let Some(dir) = transcript.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let client = TranscriptClient::to_file(base, &transcript)?;

    let spec = IssueSpec {
        issue: a.issue.clone(),
        num_categories: a.categories,
        scopes_per_category: a.scopes,
        refs_per_scope: a.refs,
    };
    let cfg = PipelineConfig {
        parse_retries: a.parse_retries,
        rewrite_cap: a.rewrite_cap,
        fetch_rounds: a.fetch_rounds,
    };
    let out = run_pipeline(&client, &spec, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    store::save_corpus(&out.corpus, &a.out)?;
    let report = a.report.clone().unwrap_or_else(|| with_suffix(&a.out, ".report.json"));
    write(&report, &format!("{}\n", out.report.to_json()))?;
    let r = &out.report;
    println!(
        "accepted {} of {} references (target {}), {} rewrites, {} dropped, {} scope shortfalls",
        r.accepted,
        r.references,
        r.target,
        r.total_rewrites,
        r.drops.len(),
        r.shortfalls.len()
    );
    t.outputs.extend([a.out.clone(), report]);
    Ok(t)
}

fn toy_model(m: &ModelArgs) -> Result<ToyModel, CliError> {
    Ok(ToyModel::new(m.config())?)
}

fn toy_extract(a: &ToyExtractArgs) -> Result<Touched, CliError> {
    let corpus = store::load_corpus(&a.corpus)?;
    if corpus.samples.is_empty() {
        return Err(CliError::Usage(format!("corpus {} has no samples", a.corpus.display())));
    }
    let model = toy_model(&a.model)?;
    let acts = export_activations(&model, &corpus.samples)?
        .with_issue(corpus.issue.clone())
        .with_category_order(corpus.categories.clone())?;
    store::save_dataset(&corpus.samples, &acts, &a.out)?;
    println!(
        "{}: N={} L={} d={} -> {}",
        model.model_id,
        acts.num_samples(),
        acts.num_layers(),
        acts.hidden_dim(),
        a.out.display()
    );
    Ok(Touched {
        inputs: vec![a.corpus.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn registry(ids: &[String]) -> Result<AlgorithmRegistry, CliError> {
    let ids: Vec<&str> = ids.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    AlgorithmRegistry::new()
        .subset(&ids)
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn build(a: &BuildArgs) -> Result<Touched, CliError> {
    let (_, acts) = store::load_dataset(&a.data)?;
    let reg = registry(&a.algorithms)?;
    let out = match a.layer {
        Some(l) => build_bundle_at_layer(&acts, &reg, a.tau, l)?,
        None => build_bundle(&acts, &reg, a.tau)?,
    };
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    store::save_bundle(&out.bundle, &a.out)?;
    if a.report {
        print!("{}", out.report);
    }
    let profiles: Vec<String> = out
        .bundle
        .profiles
        .iter()
        .map(|p| format!("{}({})", p.algorithm_id(), p.assigned_ids.len()))
        .collect();
    println!("layer {} profiles {}", out.bundle.layer, profiles.join(" "));
    Ok(Touched {
        inputs: vec![a.data.clone()],
        outputs: vec![a.out.clone()],
    })
}

fn warn_model_mismatch(model: &ToyModel, bundle: &StrategyBundle) {
    if bundle.model_id != model.model_id {
        log::warn!(
            "bundle was built for `{}`, running on `{}`",
            bundle.model_id,
            model.model_id
        );
    }
}

fn steer_config(opts: &SteerOpts, bundle: Option<&StrategyBundle>) -> SteerConfig {
    SteerConfig {
        beta: opts.beta.unwrap_or_else(|| bundle.map_or(1.0, |b| b.beta_default)),
        match_threshold: opts.match_threshold,
        positions: opts.positions,
    }
}

fn steer(a: &SteerArgs) -> Result<Touched, CliError> {
    let bundle = store::load_bundle(&a.bundle)?;
    let model = toy_model(&a.model)?;
    let prompt = ByteCodec::for_model(&model).encode(&a.prompt);
    if prompt.is_empty() {
        return Err(CliError::Usage("prompt encodes to no tokens".into()));
    }
    warn_model_mismatch(&model, &bundle);
    let cfg = steer_config(&a.steer, Some(&bundle));
    let base = runtime::greedy_decode(&model, &prompt, a.max_new, None)?;
    let out = runtime::steer_generate(&model, &prompt, &bundle, &cfg, a.max_new)?;
    let doc = json!({
        "model_id": model.model_id,
        "beta": cfg.beta,
        "match_threshold": cfg.match_threshold,
        "positions": cfg.positions,
        "prompt_tokens": prompt,
        "decision": out.decision,
        "base_tokens": base,
        "steered_tokens": out.tokens,
        "changed": base != out.tokens,
    });
    let text = to_json(&doc);
    print!("{text}");
    let mut t = Touched {
        inputs: vec![a.bundle.clone()],
        outputs: vec![],
    };
    if let Some(p) = &a.out {
        write(p, &text)?;
        t.outputs.push(p.clone());
    }
    Ok(t)
}

fn load_items(src: &ItemSource, seed: u64, t: &mut Touched) -> Result<Vec<ABItem>, CliError> {
    match (&src.items, &src.corpus) {
        (Some(p), _) => {
            t.inputs.push(p.clone());
            Ok(eval::read_ab_items(p)?)
        }
        (None, Some(p)) => {
            t.inputs.push(p.clone());
            let corpus = store::load_corpus(p)?;
            Ok(eval::normalize_ab(&corpus.samples, seed))
        }
        (None, None) => Err(CliError::Usage("one of --items or --corpus is required".into())),
    }
}

fn evaluate(a: &EvalArgs) -> Result<Touched, CliError> {
    let mut t = Touched::default();
    let items = load_items(&a.source, a.seed, &mut t)?;
    let model = toy_model(&a.model)?;
    let codec = ByteCodec::for_model(&model);
    let bundle = match &a.bundle {
        Some(p) => {
            t.inputs.push(p.clone());
            Some(store::load_bundle(p)?)
        }
        None => None,
    };
    if let Some(b) = &bundle {
        warn_model_mismatch(&model, b);
    }
    let cfg = steer_config(&a.steer, bundle.as_ref());
    let report = eval::evaluate_accuracy(&model, &codec, &items, bundle.as_ref(), &cfg)?;
    let hist: Vec<String> = report.histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    println!(
        "accuracy {:.4} over {} items ({})",
        report.accuracy,
        report.n,
        hist.join(" ")
    );
    if let Some(p) = &a.out {
        write(p, &to_json(&report))?;
        t.outputs.push(p.clone());
    }
    Ok(t)
}

fn sweep_strength(a: &SweepStrengthArgs) -> Result<Touched, CliError> {
    let mut t = Touched::default();
    let items = load_items(&a.source, a.seed, &mut t)?;
    let model = toy_model(&a.model)?;
    let bundle = store::load_bundle(&a.bundle)?;
    t.inputs.push(a.bundle.clone());
    warn_model_mismatch(&model, &bundle);
    let cfg = SteerConfig {
        beta: 1.0,
        match_threshold: a.match_threshold,
        positions: a.positions,
    };
    let mode = match a.mode {
        SweepMode::Alpha => StrengthMode::FixedAlpha,
        SweepMode::Beta => StrengthMode::BetaScale,
    };
    let result = eval::sweep_strength(
        &model,
        &ByteCodec::for_model(&model),
        &items,
        &bundle,
        mode,
        &a.grid,
        &cfg,
    )?;
    let csv = eval::sweep_csv(&result)?;
    print!("{csv}");
    write(&a.out, &csv)?;
    t.outputs.push(a.out.clone());
    Ok(t)
}

fn sweep_layers(a: &SweepLayersArgs) -> Result<Touched, CliError> {
    let mut t = Touched::default();
    let items = load_items(&a.source, a.seed, &mut t)?;
    let model = toy_model(&a.model)?;
    let (_, acts) = store::load_dataset(&a.data)?;
    t.inputs.push(a.data.clone());
    let reg = registry(&a.algorithms)?;
    let layers = a.grid.clone().unwrap_or_else(|| (0..acts.num_layers()).collect());
    let cfg = steer_config(&a.steer, None);
    let result = eval::sweep_layers(
        &model,
        &ByteCodec::for_model(&model),
        &items,
        &acts,
        &reg,
        a.tau,
        &layers,
        &cfg,
    )?;
    let csv = eval::sweep_csv(&result)?;
    print!("{csv}");
    if let Some(l) = result.selected_layer {
        println!("# selected layer {l}");
    }
    write(&a.out, &csv)?;
    t.outputs.push(a.out.clone());
    Ok(t)
}

fn inspect_bundles(a: &InspectArgs) -> Result<Touched, CliError> {
    let mut bundles = Vec::with_capacity(a.bundles.len());
    for p in &a.bundles {
        bundles.push((p.clone(), store::load_bundle(p)?));
    }
    let text = inspect::render(&bundles);
    print!("{text}");
    let mut t = Touched {
        inputs: a.bundles.clone(),
        outputs: vec![],
    };
    if let Some(p) = &a.out {
        write(p, &text)?;
        t.outputs.push(p.clone());
    }
    Ok(t)
}

fn plant(a: &PlantArgs) -> Result<Touched, CliError> {
    let spec = match a.kind {
        PlantKind::Single => PlantedSpec::single_direction(a.layer, a.seed),
        PlantKind::TwoConcepts => PlantedSpec::two_concepts(a.seed),
    };
    if a.kind == PlantKind::Single && a.layer >= spec.num_layers {
        return Err(CliError::Usage(format!(
            "--layer {} out of range for {} layers",
            a.layer, spec.num_layers
        )));
    }
    let acts = spec.generate()?;
    store::save_dataset(&placeholder_samples(&acts), &acts, &a.out)?;
    println!(
        "planted N={} L={} d={} -> {}",
        acts.num_samples(),
        acts.num_layers(),
        acts.hidden_dim(),
        a.out.display()
    );
    Ok(Touched {
        inputs: vec![],
        outputs: vec![a.out.clone()],
    })
}
