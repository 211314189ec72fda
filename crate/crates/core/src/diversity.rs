//! Self-diversity profiling and SD-ranked cluster construction.
//!
//! A model's self-diversity (SD) for one question is the mean pairwise
//! [`diversity`](crate::fuzzy::diversity) over `k` sampled answers, i.e. the
//! mean of `k (k - 1) / 2` values. A model's SD value is the mean of its
//! per-question means over a probe set. The cluster keeps the `m` models with
//! the highest SD; the first of them is the anchor.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, GenerationRequest, ModelPool};
use crate::concurrency::bounded_map;
use crate::fuzzy::diversity_in;
use crate::harness::Question;
use crate::orchestrator::PromptTemplates;
use crate::scalar::{mean, Scalar};

pub const DEFAULT_SAMPLES: usize = 10;
pub const DEFAULT_PROBE_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("profiling {model_id} needs {needed} requests, budget is {budget}")]
    Budget { model_id: String, needed: usize, budget: usize },
    #[error("profiling {model_id} failed on question {question_id}: {source}")]
    Backend {
        model_id: String,
        question_id: String,
        #[source]
        source: Box<BackendError>,
        /// Questions finished before the failure.
        partial: Vec<QuestionDiversity>,
    },
    #[error("profile file {path}: {message}")]
    Io { path: String, message: String },
}

/// Pairwise values in `(i, j)` order, `i < j`, and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfDiversity<F = f64> {
    pub pair_values: Vec<F>,
    pub mean: F,
}

pub fn self_diversity<S: AsRef<str>>(samples: &[S]) -> Result<SelfDiversity<f64>, DiversityError> {
    self_diversity_in(samples)
}

pub fn self_diversity_in<F: Scalar, S: AsRef<str>>(samples: &[S]) -> Result<SelfDiversity<F>, DiversityError> {
    if samples.len() < 2 {
        return Err(DiversityError::InvalidInput(format!(
            "self-diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut pair_values = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            pair_values.push(diversity_in::<F>(a.as_ref(), b.as_ref()).value());
        }
    }
    let mean = mean(&pair_values);
    Ok(SelfDiversity { pair_values, mean })
}

/// Pre-processing applied to samples before they are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextNormalization {
    #[default]
    None,
    Trim,
}

impl TextNormalization {
    pub fn apply(self, text: &str) -> &str {
        match self {
            TextNormalization::None => text,
            TextNormalization::Trim => text.trim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionDiversity {
    pub question_id: String,
    pub mean: f64,
    pub pair_values: Vec<f64>,
    /// Raw samples in sample-index order.
    pub samples: Vec<String>,
}

/// SD measurements of one model. Persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdProfile {
    pub model_id: String,
    pub sd_value: f64,
    pub sample_count: usize,
    pub per_question: Vec<QuestionDiversity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl SdProfile {
    pub fn from_questions(
        model_id: impl Into<String>,
        sample_count: usize,
        per_question: Vec<QuestionDiversity>,
    ) -> Self {
        let means: Vec<f64> = per_question.iter().map(|q| q.mean).collect();
        SdProfile { model_id: model_id.into(), sd_value: mean(&means), sample_count, per_question, config_digest: None }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DiversityError> {
        let path = path.as_ref();
        let io = |message: String| DiversityError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DiversityError> {
        let path = path.as_ref();
        let io = |message: String| DiversityError::Io { path: path.display().to_string(), message };
        let mut json = serde_json::to_string_pretty(self).map_err(|e| io(e.to_string()))?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| io(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub samples: usize,
    pub temperature: f64,
    pub parallelism: usize,
    pub normalization: TextNormalization,
    pub templates: PromptTemplates,
    /// Upper bound on `samples * probes`.
    pub max_requests: Option<usize>,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            samples: DEFAULT_SAMPLES,
            temperature: DEFAULT_PROBE_TEMPERATURE,
            parallelism: 4,
            normalization: TextNormalization::None,
            templates: PromptTemplates::default(),
            max_requests: None,
        }
    }
}

/// Samples `options.samples` answers per probe question from one model and
/// computes its SD profile. Draws for a question run concurrently and are
/// paired in sample-index order.
pub fn profile_model(
    model_id: &str,
    probes: &[Question],
    pool: &ModelPool,
    options: &ProfileOptions,
) -> Result<SdProfile, DiversityError> {
    let k = options.samples;
    if k < 2 {
        return Err(DiversityError::InvalidInput(format!("need at least 2 samples per question, got {k}")));
    }
    if probes.is_empty() {
        return Err(DiversityError::InvalidInput("probe set is empty".into()));
    }
    let spec = pool.spec(model_id).ok_or_else(|| DiversityError::InvalidInput(format!("unknown model {model_id}")))?;
    let needed = k * probes.len();
    if let Some(budget) = options.max_requests.filter(|&b| needed > b) {
        return Err(DiversityError::Budget { model_id: model_id.to_string(), needed, budget });
    }
    let sampling = spec.sampling.with_temperature(options.temperature);

    let mut per_question = Vec::with_capacity(probes.len());
    for question in probes {
        let prompt = options.templates.render_question(question);
        let indices: Vec<u32> = (0..k as u32).collect();
        let results = bounded_map(&indices, options.parallelism, |_, &i| {
            pool.generate(model_id, &GenerationRequest::new(prompt.clone(), sampling.clone()).sample(i))
        });
        let mut samples = Vec::with_capacity(k);
        for result in results {
            match result {
                Ok(output) => samples.push(output.text),
                Err(source) => {
                    return Err(DiversityError::Backend {
                        model_id: model_id.to_string(),
                        question_id: question.id.clone(),
                        source: Box::new(source),
                        partial: per_question,
                    })
                }
            }
        }
        let normalized: Vec<&str> = samples.iter().map(|s| options.normalization.apply(s)).collect();
        let sd = self_diversity(&normalized)?;
        per_question.push(QuestionDiversity {
            question_id: question.id.clone(),
            mean: sd.mean,
            pair_values: sd.pair_values,
            samples,
        });
    }
    Ok(SdProfile::from_questions(model_id, k, per_question))
}

/// Ordered cluster members; `members[0]` is the anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub members: Vec<String>,
    pub anchor_id: String,
}

impl ClusterPlan {
    /// Plan with an explicit member order.
    pub fn from_members(members: Vec<String>) -> Result<Self, DiversityError> {
        let anchor_id = members.first().cloned().ok_or_else(|| DiversityError::InvalidInput("empty cluster".into()))?;
        let mut unique = members.clone();
        unique.sort();
        unique.dedup();
        if unique.len() != members.len() {
            return Err(DiversityError::InvalidInput("duplicate cluster member".into()));
        }
        Ok(ClusterPlan { members, anchor_id })
    }

    /// Moves `model_id` to the front so it becomes the anchor.
    pub fn with_anchor(mut self, model_id: &str) -> Result<Self, DiversityError> {
        let pos = self
            .members
            .iter()
            .position(|m| m == model_id)
            .ok_or_else(|| DiversityError::InvalidInput(format!("anchor {model_id} is not a cluster member")))?;
        let anchor = self.members.remove(pos);
        self.members.insert(0, anchor);
        self.anchor_id = model_id.to_string();
        Ok(self)
    }
}

/// Descending SD, ties by ascending model id.
pub fn rank_profiles(profiles: &[SdProfile]) -> Vec<&SdProfile> {
    let mut ranked: Vec<&SdProfile> = profiles.iter().collect();
    ranked.sort_by(|a, b| {
        b.sd_value.partial_cmp(&a.sd_value).unwrap_or(Ordering::Equal).then_with(|| a.model_id.cmp(&b.model_id))
    });
    ranked
}

/// The `m` highest-SD models, highest first.
pub fn select_cluster(profiles: &[SdProfile], m: usize) -> Result<ClusterPlan, DiversityError> {
    if m == 0 {
        return Err(DiversityError::InvalidInput("cluster size must be at least 1".into()));
    }
    if m > profiles.len() {
        return Err(DiversityError::InvalidInput(format!(
            "cluster size {m} exceeds the {} profiled models",
            profiles.len()
        )));
    }
    let members = rank_profiles(profiles).into_iter().take(m).map(|p| p.model_id.clone()).collect();
    ClusterPlan::from_members(members)
}
