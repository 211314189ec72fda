//! Run configuration file.
//!
//! One TOML file describes a whole run. Relative paths are resolved against
//! the directory of the file. The config digest covers everything that can
//! influence results (templates are hashed by content); the `[io]` section
//! is excluded, so moving output or fixture files does not change it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use colab_core::backends::ModelSpec;
use colab_core::diversity::{TextNormalization, DEFAULT_PROBE_TEMPERATURE, DEFAULT_SAMPLES};
use colab_core::harness::{DatasetSchema, DEFAULT_PASS_THRESHOLD};
use colab_core::orchestrator::{MaskPolarity, MaskSchedule, PromptTemplates};

pub const DEFAULT_PROBE_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Call the configured endpoints.
    Live,
    /// Call the endpoints and store every completion in the fixture file.
    Record,
    /// Serve completions from the fixture file only.
    #[default]
    Replay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub probe: ProbeConfig,
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default)]
    pub templates: TemplateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Probe questions; the first `count` dataset questions when unset.
    pub questions: Option<PathBuf>,
    pub count: usize,
    pub k: usize,
    pub temperature: f64,
    pub normalization: TextNormalization,
    pub max_requests: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            questions: None,
            count: DEFAULT_PROBE_COUNT,
            k: DEFAULT_SAMPLES,
            temperature: DEFAULT_PROBE_TEMPERATURE,
            normalization: TextNormalization::None,
            max_requests: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    pub size: usize,
    /// Must be one of the selected members.
    #[serde(default)]
    pub anchor: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Both unset: two models masked per layer until one remains.
    pub layers: Option<usize>,
    pub masks_after_layer: Option<Vec<usize>>,
    pub polarity: MaskPolarity,
    /// Character budget for responses embedded in aggregation prompts.
    pub prompt_budget: Option<usize>,
}

impl ScheduleConfig {
    pub fn resolve(&self, cluster_size: usize) -> Result<MaskSchedule> {
        let schedule = match (self.layers, &self.masks_after_layer) {
            (None, None) => MaskSchedule::two_per_layer(cluster_size),
            (Some(l), Some(masks)) => MaskSchedule::new(l, masks.clone())?,
            (Some(1), None) => MaskSchedule::new(1, vec![])?,
            _ => bail!("schedule: set both `layers` and `masks_after_layer`, or neither"),
        };
        schedule.validate_for(cluster_size).context("schedule")?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub dataset: PathBuf,
    #[serde(default = "default_schema")]
    pub schema: DatasetSchema,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_schema() -> DatasetSchema {
    DatasetSchema::Choices4
}

fn default_threshold() -> f64 {
    DEFAULT_PASS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    pub fixtures: Option<PathBuf>,
    pub mode: Mode,
    /// Replay falls back to the lowest recorded sample when one is missing.
    pub lenient_replay: bool,
    pub parallelism: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            output_dir: PathBuf::from("out"),
            fixtures: None,
            mode: Mode::Replay,
            lenient_replay: false,
            parallelism: 4,
        }
    }
}

/// Inline templates or files holding them; inline text wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub question: Option<String>,
    pub aggregation: Option<String>,
    pub question_file: Option<PathBuf>,
    pub aggregation_file: Option<PathBuf>,
}

/// A parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub templates: PromptTemplates,
    pub schedule: MaskSchedule,
    pub digest: String,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base_dir).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        let base_dir = base_dir.into();
        let templates = resolve_templates(&config.templates, &base_dir)?;
        let schedule = validate(&config, &templates)?;
        let digest = digest(&config, &templates)?;
        Ok(LoadedConfig { config, base_dir, templates, schedule, digest })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelSpec> {
        self.config.models.iter().find(|m| m.model_id == model_id)
    }
}

fn resolve_templates(t: &TemplateConfig, base: &Path) -> Result<PromptTemplates> {
    let defaults = PromptTemplates::default();
    let read = |inline: &Option<String>, file: &Option<PathBuf>, default: String| -> Result<String> {
        match (inline, file) {
            (Some(text), _) => Ok(text.clone()),
            (None, Some(f)) => {
                let p = if f.is_absolute() { f.clone() } else { base.join(f) };
                fs::read_to_string(&p).with_context(|| format!("reading template {}", p.display()))
            }
            (None, None) => Ok(default),
        }
    };
    Ok(PromptTemplates {
        question: read(&t.question, &t.question_file, defaults.question)?,
        aggregation: read(&t.aggregation, &t.aggregation_file, defaults.aggregation)?,
    })
}

fn validate(c: &RunConfig, templates: &PromptTemplates) -> Result<MaskSchedule> {
    ensure!(!c.models.is_empty(), "models: at least one model is required");
    let mut seen = BTreeSet::new();
    for m in &c.models {
        ensure!(seen.insert(m.model_id.as_str()), "models: duplicate model_id {}", m.model_id);
        m.validate()?;
    }
    ensure!(
        (1..=c.models.len()).contains(&c.cluster.size),
        "cluster.size must be between 1 and the number of models ({}), got {}",
        c.models.len(),
        c.cluster.size
    );
    if let Some(anchor) = &c.cluster.anchor {
        ensure!(seen.contains(anchor.as_str()), "cluster.anchor {anchor} is not a configured model");
    }
    ensure!(c.probe.k >= 2, "probe.k must be at least 2, got {}", c.probe.k);
    ensure!(c.probe.count >= 1, "probe.count must be at least 1");
    ensure!(c.probe.temperature >= 0.0 && c.probe.temperature.is_finite(), "probe.temperature must be >= 0");
    ensure!((0.0..=1.0).contains(&c.eval.threshold), "eval.threshold must be in [0, 1], got {}", c.eval.threshold);
    ensure!(c.io.parallelism >= 1, "io.parallelism must be at least 1");
    templates.validate().map_err(anyhow::Error::msg).context("templates")?;
    c.schedule.resolve(c.cluster.size)
}

/// `sha256:` + hex digest of the canonical JSON of everything but `[io]`,
/// with templates replaced by their resolved text.
fn digest(c: &RunConfig, templates: &PromptTemplates) -> Result<String> {
    let mut value = serde_json::to_value(c)?;
    let obj = value.as_object_mut().expect("config serializes to an object");
    obj.remove("io");
    obj.insert("templates".into(), serde_json::to_value(templates)?);
    // serde_json maps are ordered by key, which makes this canonical
    let canonical = serde_json::to_string(&value)?;
    Ok(format!("sha256:{}", hex::encode(Sha256::digest(canonical.as_bytes()))))
}

/// Whether the mode reads or writes the shared `io.fixtures` store.
pub fn needs_fixture_store(mode: Mode, models: &[ModelSpec]) -> bool {
    match mode {
        Mode::Record => true,
        Mode::Replay => models.iter().any(|m| m.fixture.is_none()),
        Mode::Live => false,
    }
}
