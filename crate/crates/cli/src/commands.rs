//! The `colab` subcommands.
//!
//! Layout of the output directory:
//!
//! ```text
//! profiles/<model>.json   self-diversity profiles
//! cluster.json            selected cluster, anchor first
//! traces/<question>.json  one collaboration trace per question
//! report.json             evaluation report
//! report.txt              the same as a fixed-width table
//! run_manifest.json       timestamps and model identities per command
//! ```
//!
//! Everything except `run_manifest.json` is byte-identical across replays of
//! the same configuration and fixtures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _, Result};
use chrono::{SecondsFormat, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use colab_core::backends::{
    Backend, BackendKind, ChatCompletionsBackend, FixtureStore, ModelPool, RecordingBackend, ReplayBackend,
};
use colab_core::concurrency::bounded_map;
use colab_core::diversity::{profile_model, select_cluster, ClusterPlan, ProfileOptions, SdProfile};
use colab_core::harness::{evaluate, load_dataset, render_table, EvalReport, Question, ReportManifest};
use colab_core::orchestrator::{CollaborationConfig, CollaborationTrace, Orchestrator};

use crate::config::{needs_fixture_store, LoadedConfig, Mode};

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: LoadedConfig,
    pub mode: Mode,
    pub parallelism: usize,
    pub output_dir: PathBuf,
}

impl Context {
    pub fn new(cfg: LoadedConfig, overrides: Overrides) -> Result<Self> {
        let mode = overrides.mode.unwrap_or(cfg.config.io.mode);
        let parallelism = overrides.parallelism.unwrap_or(cfg.config.io.parallelism);
        if parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        let output_dir = overrides.output_dir.unwrap_or_else(|| cfg.resolve(&cfg.config.io.output_dir));
        if needs_fixture_store(mode, &cfg.config.models) && cfg.config.io.fixtures.is_none() {
            bail!("{mode} mode needs io.fixtures");
        }
        Ok(Context { cfg, mode, parallelism, output_dir })
    }

    pub fn profiles_dir(&self) -> PathBuf {
        self.output_dir.join("profiles")
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.output_dir.join("traces")
    }

    pub fn trace_path(&self, question_id: &str) -> PathBuf {
        self.traces_dir().join(format!("{}.json", file_stem(question_id)))
    }

    pub fn profile_path(&self, model_id: &str) -> PathBuf {
        self.profiles_dir().join(format!("{}.json", file_stem(model_id)))
    }

    fn fixture_path(&self) -> Option<PathBuf> {
        self.cfg.config.io.fixtures.as_deref().map(|p| self.cfg.resolve(p))
    }

    pub fn dataset(&self) -> Result<Vec<Question>> {
        let eval = &self.cfg.config.eval;
        let path = self.cfg.resolve(&eval.dataset);
        load_dataset(&path, eval.schema).with_context(|| format!("dataset {}", path.display()))
    }

    pub fn probes(&self) -> Result<Vec<Question>> {
        let probe = &self.cfg.config.probe;
        match &probe.questions {
            Some(p) => {
                let path = self.cfg.resolve(p);
                load_dataset(&path, self.cfg.config.eval.schema)
                    .with_context(|| format!("probe set {}", path.display()))
            }
            None => Ok(self.dataset()?.into_iter().take(probe.count).collect()),
        }
    }
}

/// Question and model ids as file names.
pub fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

/// Backends for every configured model in the context's mode.
pub fn build_pool(ctx: &Context) -> Result<ModelPool> {
    let mut stores: BTreeMap<PathBuf, Arc<FixtureStore>> = BTreeMap::new();
    let mut open = |path: PathBuf, create: bool| -> Result<Arc<FixtureStore>> {
        if let Some(s) = stores.get(&path) {
            return Ok(s.clone());
        }
        let store = if create { FixtureStore::open_or_create(&path)? } else { FixtureStore::open(&path)? };
        let store = Arc::new(store);
        stores.insert(path, store.clone());
        Ok(store)
    };
    let lenient = ctx.cfg.config.io.lenient_replay;
    let replay = |store: Arc<FixtureStore>| -> Arc<dyn Backend> {
        if lenient {
            Arc::new(ReplayBackend::lenient(store))
        } else {
            Arc::new(ReplayBackend::strict(store))
        }
    };

    let mut pool = ModelPool::new();
    for spec in &ctx.cfg.config.models {
        let own_fixture = spec.fixture.as_deref().map(|p| ctx.cfg.resolve(p));
        let backend: Arc<dyn Backend> = match (ctx.mode, spec.kind) {
            (Mode::Replay, _) | (_, BackendKind::Replay) => {
                let path = own_fixture.or_else(|| ctx.fixture_path()).expect("checked by Context::new");
                replay(open(path, false)?)
            }
            (Mode::Live, _) => Arc::new(ChatCompletionsBackend::from_env(spec)?),
            (Mode::Record, _) => {
                let live: Arc<dyn Backend> = Arc::new(ChatCompletionsBackend::from_env(spec)?);
                let store = open(ctx.fixture_path().expect("checked by Context::new"), true)?;
                Arc::new(RecordingBackend::new(live, store))
            }
        };
        pool.insert(spec.clone(), backend);
    }
    Ok(pool)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    write_atomic(path, &json)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFile {
    pub config_digest: String,
    #[serde(flatten)]
    pub plan: ClusterPlan,
}

/// Cluster plan from profiles, with the configured anchor override applied.
pub fn plan_from_profiles(ctx: &Context, profiles: &[SdProfile]) -> Result<ClusterPlan> {
    let plan = select_cluster(profiles, ctx.cfg.config.cluster.size)?;
    match &ctx.cfg.config.cluster.anchor {
        Some(anchor) => plan.with_anchor(anchor).map_err(|e| anyhow!("cluster.anchor: {e}")),
        None => Ok(plan),
    }
}

pub fn load_profiles(ctx: &Context) -> Result<Vec<SdProfile>> {
    let mut profiles = Vec::new();
    let mut missing = Vec::new();
    for spec in &ctx.cfg.config.models {
        let path = ctx.profile_path(&spec.model_id);
        if path.exists() {
            profiles.push(SdProfile::load(&path)?);
        } else {
            missing.push(spec.model_id.clone());
        }
    }
    if !missing.is_empty() {
        bail!("no self-diversity profile for {}; run `colab profile` first", missing.join(", "));
    }
    Ok(profiles)
}

#[derive(Debug)]
pub struct ProfileOutcome {
    pub profiles: Vec<SdProfile>,
    pub failed: Vec<(String, String)>,
    pub plan: Option<ClusterPlan>,
    pub table: String,
}

/// Profiles every configured model. A failing model is reported and skipped;
/// the others are still written.
pub fn cmd_profile(ctx: &Context, pool: &ModelPool) -> Result<ProfileOutcome> {
    let probes = ctx.probes()?;
    let probe = &ctx.cfg.config.probe;
    let options = ProfileOptions {
        samples: probe.k,
        temperature: probe.temperature,
        parallelism: ctx.parallelism,
        normalization: probe.normalization,
        templates: ctx.cfg.templates.clone(),
        max_requests: probe.max_requests,
    };
    let mut profiles = Vec::new();
    let mut failed = Vec::new();
    for spec in &ctx.cfg.config.models {
        info!("profiling {} on {} probe questions, k = {}", spec.model_id, probes.len(), probe.k);
        match profile_model(&spec.model_id, &probes, pool, &options) {
            Ok(mut profile) => {
                profile.config_digest = Some(ctx.cfg.digest.clone());
                write_json(&ctx.profile_path(&spec.model_id), &profile)?;
                profiles.push(profile);
            }
            Err(e) => {
                warn!("profiling {} failed: {e}", spec.model_id);
                failed.push((spec.model_id.clone(), e.to_string()));
            }
        }
    }

    let plan = if profiles.len() >= ctx.cfg.config.cluster.size {
        let plan = plan_from_profiles(ctx, &profiles)?;
        write_json(
            &ctx.output_dir.join("cluster.json"),
            &ClusterFile { config_digest: ctx.cfg.digest.clone(), plan: plan.clone() },
        )?;
        Some(plan)
    } else {
        None
    };
    let table = profile_table(&profiles, &failed, plan.as_ref());
    Ok(ProfileOutcome { profiles, failed, plan, table })
}

/// Models by descending SD with their cluster role.
pub fn profile_table(profiles: &[SdProfile], failed: &[(String, String)], plan: Option<&ClusterPlan>) -> String {
    let ranked = colab_core::diversity::rank_profiles(profiles);
    let width =
        ranked.iter().map(|p| p.model_id.len()).chain(failed.iter().map(|f| f.0.len())).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<width$}  {:>7}  {:>9}  cluster", "rank", "model", "SD", "questions");
    for (i, p) in ranked.iter().enumerate() {
        let role = match plan {
            Some(plan) if plan.anchor_id == p.model_id => "anchor",
            Some(plan) if plan.members.contains(&p.model_id) => "member",
            Some(_) => "-",
            None => "?",
        };
        let _ = writeln!(
            out,
            "{:>4}  {:<width$}  {:>7.2}  {:>9}  {role}",
            i + 1,
            p.model_id,
            p.sd_value,
            p.per_question.len()
        );
    }
    for (id, err) in failed {
        let _ = writeln!(out, "{:>4}  {id:<width$}  {:>7}  {:>9}  {err}", "-", "FAILED", "-");
    }
    out
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub written: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Runs the collaboration for the dataset (or one question of it) and
/// writes one trace per question. Existing traces are kept unless `force`.
pub fn cmd_run(ctx: &Context, pool: &ModelPool, only: Option<&str>, force: bool) -> Result<RunOutcome> {
    let mut questions = ctx.dataset()?;
    if let Some(id) = only {
        questions.retain(|q| q.id == id);
        if questions.is_empty() {
            bail!("question {id} is not in the dataset");
        }
    }
    let plan = plan_from_profiles(ctx, &load_profiles(ctx)?)?;
    let config = CollaborationConfig {
        schedule: ctx.cfg.schedule.clone(),
        polarity: ctx.cfg.config.schedule.polarity,
        templates: ctx.cfg.templates.clone(),
        prompt_budget: ctx.cfg.config.schedule.prompt_budget,
        parallelism: ctx.parallelism,
    };
    let orchestrator = Orchestrator::new(pool, config)?;
    fs::create_dir_all(ctx.traces_dir())?;

    enum Done {
        Written,
        Skipped,
        Failed(String),
    }
    let results = bounded_map(&questions, ctx.parallelism, |_, q| {
        let path = ctx.trace_path(&q.id);
        if path.exists() && !force {
            return Done::Skipped;
        }
        let outcome = orchestrator.run_collaboration(q, &plan).map_err(anyhow::Error::from).and_then(|mut trace| {
            trace.config_digest = Some(ctx.cfg.digest.clone());
            write_json(&path, &trace)
        });
        match outcome {
            Ok(()) => Done::Written,
            Err(e) => {
                warn!("question {}: {e:#}", q.id);
                Done::Failed(format!("{e:#}"))
            }
        }
    });
    let mut outcome = RunOutcome::default();
    for (q, done) in questions.iter().zip(results) {
        match done {
            Done::Written => outcome.written.push(q.id.clone()),
            Done::Skipped => outcome.skipped.push(q.id.clone()),
            Done::Failed(e) => outcome.failed.push((q.id.clone(), e)),
        }
    }
    Ok(outcome)
}

/// Scores the traces of every dataset question.
pub fn cmd_eval(ctx: &Context) -> Result<EvalReport> {
    let questions = ctx.dataset()?;
    let mut missing = Vec::new();
    let mut answers = BTreeMap::new();
    let mut members: Option<Vec<String>> = None;
    for q in &questions {
        let path = ctx.trace_path(&q.id);
        if !path.exists() {
            missing.push(q.id.clone());
            continue;
        }
        let trace: CollaborationTrace = read_json(&path)?;
        if members.is_none() {
            members = trace.layers.first().map(|l| l.active_ids.clone());
        }
        answers.insert(q.id.clone(), trace.final_text);
    }
    if !missing.is_empty() {
        missing.sort();
        bail!("no trace for {} question(s): {}", missing.len(), missing.join(", "));
    }
    let report = evaluate(&questions, &answers, ctx.cfg.config.eval.threshold)?.with_manifest(ReportManifest {
        config_digest: Some(ctx.cfg.digest.clone()),
        models: members.unwrap_or_default(),
    });
    write_json(&ctx.output_dir.join("report.json"), &report)?;
    write_atomic(&ctx.output_dir.join("report.txt"), &render_table(&report))?;
    Ok(report)
}

/// Re-renders the table of an existing report.
pub fn cmd_report(ctx: &Context) -> Result<String> {
    let report: EvalReport = read_json(&ctx.output_dir.join("report.json"))?;
    let table = render_table(&report);
    write_atomic(&ctx.output_dir.join("report.txt"), &table)?;
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestModel {
    pub model_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandRecord {
    pub mode: Mode,
    pub config_digest: String,
    pub started_at: String,
    pub finished_at: String,
    pub tool_version: String,
    pub models: Vec<ManifestModel>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Records the latest invocation of `command` in `run_manifest.json`.
pub fn update_manifest(ctx: &Context, command: &str, started_at: String) -> Result<()> {
    let path = ctx.output_dir.join("run_manifest.json");
    let mut manifest: BTreeMap<String, CommandRecord> = if path.exists() { read_json(&path)? } else { BTreeMap::new() };
    manifest.insert(
        command.to_string(),
        CommandRecord {
            mode: ctx.mode,
            config_digest: ctx.cfg.digest.clone(),
            started_at,
            finished_at: now(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            models: ctx
                .cfg
                .config
                .models
                .iter()
                .map(|m| ManifestModel {
                    model_id: m.model_id.clone(),
                    kind: m.kind,
                    model_name: m.model_name.clone(),
                    endpoint: m.endpoint.clone(),
                })
                .collect(),
        },
    );
    write_json(&path, &manifest)
}
