//! Rebuilds `tests/fixtures/corpus/fixtures.jsonl` from scripted models.
//!
//! Every completion is produced by a deterministic script and captured
//! through the recording backend, exactly as a live `record-fixtures` run
//! would capture real endpoints. With `--write-golden` the replayed report
//! and cluster plan are also copied to `tests/fixtures/golden/`; audit them
//! by hand before committing.
//!
//! ```text
//! cargo run -p colab-cli --example build_fixture_corpus [-- --write-golden]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use colab_cli::commands::{self, Context, Overrides};
use colab_cli::config::LoadedConfig;
use colab_core::backends::{
    BackendError, FixtureStore, FnBackend, GenerationRequest, ModelOutput, ModelPool, ModelSpec, RecordingBackend,
};
use colab_core::harness::{load_dataset, DatasetSchema, Question};

const ANCHOR: &str = "deepseek-r1-32b";

struct Style {
    opener: &'static str,
    /// Per-word mutation rate when sampled at probe temperature.
    churn: f64,
    /// Chance of picking the gold answer in a collaboration layer.
    skill: f64,
    latency_ms: u64,
}

fn style(model_id: &str) -> Style {
    let (opener, churn, skill, latency_ms) = match model_id {
        "deepseek-r1-32b" => ("<think> Let me reason through the mechanism step by step.", 0.55, 0.85, 2400),
        "qwq-32b" => ("Okay, let me think this through carefully before answering.", 0.45, 0.8, 2100),
        "openthinker-32b" => ("Let us weigh each option in turn.", 0.38, 0.75, 1900),
        "qwen2.5-32b" => ("Considering the clinical picture described,", 0.3, 0.7, 1300),
        "qwen2.5-14b" => ("Based on standard references,", 0.22, 0.6, 800),
        "phi4-14b" => ("In summary,", 0.12, 0.55, 700),
        _ => ("", 0.0, 0.5, 900),
    };
    Style { opener, churn, skill, latency_ms }
}

#[rustfmt::skip]
const FILLER: &[&str] = &[
    "physiology", "presentation", "history", "typical", "classic", "evidence", "guideline", "likely",
    "mechanism", "differential", "finding", "feature", "supports", "excludes", "common", "pathway",
    "patient", "therapy", "clinical", "diagnosis", "consistent", "pattern", "review", "criteria",
];

/// Anchor's answer in the final layer; `None` produces a non-committal reply.
fn designed_final(question_id: &str) -> Option<&'static str> {
    match question_id {
        "IM1" | "GS1" | "GS4" | "PD4" | "OG3" => Some("C"),
        "IM2" | "PD1" => Some("A"),
        "IM3" | "IM5" | "GS3" | "PD2" | "PD5" | "OG1" => Some("B"),
        // wrong on purpose
        "IM4" => Some("C"),
        "IM6" => Some("B"),
        "GS2" => Some("B"),
        "GS5" => Some("A"),
        "OG4" => Some("A"),
        "PD3" => Some("AC"),
        "OG2" => None,
        other => panic!("no script for {other}"),
    }
}

fn rng_for(parts: &[&str]) -> ChaCha8Rng {
    let digest = Sha256::digest(parts.join("\u{1f}").as_bytes());
    ChaCha8Rng::from_seed(digest.into())
}

fn statement(letters: &str) -> String {
    match letters.len() {
        1 => format!("The answer is {letters}."),
        _ => {
            let v: Vec<String> = letters.chars().map(String::from).collect();
            format!("The answers are {}.", v.join(" and "))
        }
    }
}

fn probe_text(model_id: &str, q: &Question, sample: u32) -> String {
    let s = style(model_id);
    let gold: String = q.gold.iter().collect();
    let mut base = rng_for(&[model_id, &q.id, "base"]);
    let mut words: Vec<&str> = (0..18).map(|_| *FILLER.choose(&mut base).unwrap()).collect();
    let mut rng = rng_for(&[model_id, &q.id, &sample.to_string()]);
    for w in words.iter_mut() {
        if rng.random_bool(s.churn) {
            *w = FILLER.choose(&mut rng).unwrap();
        }
    }
    if s.churn > 0.0 && rng.random_bool(s.churn) {
        let extra = rng.random_range(2..8);
        words.extend((0..extra).map(|_| *FILLER.choose(&mut rng).unwrap()));
    }
    let body = words.join(" ");
    format!("{} {body}. {}", s.opener, statement(&gold)).trim().to_string()
}

/// The number of embedded responses tells the layer: 4, 2, 1 prior outputs
/// for layers 2, 3, 4.
fn layer_of(prompt: &str) -> usize {
    if !prompt.contains("Responses from models:") {
        return 1;
    }
    let n = (1..).take_while(|i| prompt.contains(&format!("\n{i}. "))).count();
    match n {
        4 => 2,
        2 => 3,
        1 => 4,
        _ => panic!("unexpected response count {n}: {prompt}"),
    }
}

fn layer_text(model_id: &str, q: &Question, layer: usize) -> String {
    let s = style(model_id);
    let mut rng = rng_for(&[model_id, &q.id, &layer.to_string(), "layer"]);
    let gold: String = q.gold.iter().collect();
    let letters: Vec<char> = q.options.keys().copied().collect();
    let letter = if model_id == ANCHOR {
        match (q.id.as_str(), layer) {
            // revises a wrong first answer after seeing the others
            ("IM1", 1) => Some("D".to_string()),
            _ => designed_final(&q.id).map(String::from),
        }
    } else if rng.random_bool((s.skill + 0.05 * (layer as f64 - 1.0)).min(0.98)) {
        Some(gold.clone())
    } else {
        let wrong: Vec<char> = letters.iter().copied().filter(|c| !q.gold.contains(c)).collect();
        Some(wrong.choose(&mut rng).unwrap().to_string())
    };
    let n = rng.random_range(6..14);
    let body: Vec<&str> = (0..n).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
    match letter {
        Some(l) => {
            let named = l.chars().map(|c| q.options[&c].to_lowercase()).collect::<Vec<_>>().join(" and ");
            format!("{} The {} points to {named}. {}", s.opener, body.join(" "), statement(&l)).trim().to_string()
        }
        None => format!(
            "{} The {} leave this vignette equivocal, so no single option can be chosen with confidence.",
            s.opener,
            body.join(" ")
        )
        .trim()
        .to_string(),
    }
}

fn script(
    probes: Arc<BTreeMap<String, Question>>,
    dataset: Arc<BTreeMap<String, Question>>,
) -> impl Fn(&ModelSpec, &GenerationRequest) -> Result<ModelOutput, BackendError> + Send + Sync {
    move |spec, req| {
        let find = |set: &BTreeMap<String, Question>| set.values().find(|q| req.prompt.contains(&q.stem)).cloned();
        let text = if let Some(q) = find(&probes) {
            probe_text(&spec.model_id, &q, req.sample_index)
        } else if let Some(q) = find(&dataset) {
            layer_text(&spec.model_id, &q, layer_of(&req.prompt))
        } else {
            return Err(BackendError::Config { model_id: spec.model_id.clone(), message: "unscripted prompt".into() });
        };
        let s = style(&spec.model_id);
        Ok(ModelOutput {
            model_id: spec.model_id.clone(),
            latency_ms: s.latency_ms + (text.len() as u64 % 97),
            token_counts: None,
            attempt: 1,
            text,
        })
    }
}

fn by_id(questions: Vec<Question>) -> Arc<BTreeMap<String, Question>> {
    Arc::new(questions.into_iter().map(|q| (q.id.clone(), q)).collect())
}

fn main() -> Result<()> {
    env_logger::init();
    let write_golden = std::env::args().any(|a| a == "--write-golden");
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let corpus = root.join("corpus");
    let config_path = corpus.join("colab.toml");
    let cfg = LoadedConfig::load(&config_path)?;
    let fixtures = corpus.join("fixtures.jsonl");
    if fixtures.exists() {
        fs::remove_file(&fixtures)?;
    }

    let probes = by_id(load_dataset(corpus.join("probes.jsonl"), DatasetSchema::Choices4)?);
    let dataset = by_id(load_dataset(corpus.join("dataset.jsonl"), DatasetSchema::Choices4)?);
    let store = Arc::new(FixtureStore::open_or_create(&fixtures)?);
    let scripted = Arc::new(FnBackend(script(probes, dataset)));
    let mut pool = ModelPool::new();
    for spec in &cfg.config.models {
        pool.insert(spec.clone(), Arc::new(RecordingBackend::new(scripted.clone(), store.clone())));
    }

    let recorded = tempfile::tempdir()?;
    let ctx =
        Context::new(cfg.clone(), Overrides { output_dir: Some(recorded.path().to_path_buf()), ..Default::default() })?;
    let profiled = commands::cmd_profile(&ctx, &pool)?;
    print!("{}", profiled.table);
    match &profiled.plan {
        Some(plan) if plan.anchor_id == ANCHOR => {}
        other => bail!("script expects {ANCHOR} as anchor, got {other:?}"),
    }
    let run = commands::cmd_run(&ctx, &pool, None, true)?;
    if !run.failed.is_empty() {
        bail!("collaboration failed: {:?}", run.failed);
    }
    println!("recorded {} completions into {}", store.len(), fixtures.display());

    // the golden files come from a pure replay of what was just recorded
    let replayed = tempfile::tempdir()?;
    let ctx = Context::new(cfg, Overrides { output_dir: Some(replayed.path().to_path_buf()), ..Default::default() })?;
    let pool = commands::build_pool(&ctx)?;
    commands::cmd_profile(&ctx, &pool)?;
    commands::cmd_run(&ctx, &pool, None, false)?;
    let report = commands::cmd_eval(&ctx)?;
    print!("{}", colab_core::harness::render_table(&report));

    if write_golden {
        let golden = root.join("golden");
        fs::create_dir_all(&golden)?;
        for name in ["report.json", "report.txt", "cluster.json"] {
            copy(&replayed.path().join(name), &golden.join(name))?;
        }
        println!("golden files written to {}", golden.display());
    }
    Ok(())
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).with_context(|| format!("copying {} to {}", from.display(), to.display()))?;
    Ok(())
}
