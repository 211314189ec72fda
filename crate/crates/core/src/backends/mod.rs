//! Text generation backends.
//!
//! Every model in a run is reached through the [`Backend`] trait. Remote and
//! local runtimes share one OpenAI-compatible chat-completions client
//! ([`http::ChatCompletionsBackend`]); [`replay`] provides the fixture store,
//! the replaying backend used by offline runs and a recording wrapper that
//! captures live traffic into fixtures.

pub mod http;
pub mod replay;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::ChatCompletionsBackend;
pub use replay::{FixtureRecord, FixtureStore, RecordOutcome, RecordingBackend, ReplayBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    OpenaiCompatible,
    LocalRuntime,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for Sampling {
    /// Greedy decoding, the collaboration-layer default.
    fn default() -> Self {
        Sampling { temperature: 0.0, top_p: 1.0, max_tokens: 2048, seed: None }
    }
}

impl Sampling {
    pub fn with_temperature(&self, temperature: f64) -> Self {
        Sampling { temperature, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before attempt `n + 2` is `backoff_ms[n]`; the last entry repeats.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, backoff_ms: vec![500, 2000, 8000] }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, failed_attempts: u32) -> Duration {
        let idx = failed_attempts.saturating_sub(1) as usize;
        let ms = self.backoff_ms.get(idx).or_else(|| self.backoff_ms.last()).copied().unwrap_or(0);
        Duration::from_millis(ms)
    }
}

/// Identity, endpoint and decoding parameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Provider-side model name; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    /// Fixture file for `replay` models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> f64 {
    120.0
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, kind: BackendKind) -> Self {
        ModelSpec {
            model_id: model_id.into(),
            kind,
            endpoint: None,
            model_name: None,
            fixture: None,
            sampling: Sampling::default(),
            timeout_secs: default_timeout_secs(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn provider_model(&self) -> &str {
        self.model_name.as_deref().unwrap_or(&self.model_id)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Environment variable holding the bearer token for this model.
    pub fn api_key_var(&self) -> String {
        let id: String = self
            .model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
            .collect();
        format!("COLAB_API_KEY_{id}")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |message: String| Err(BackendError::Config { model_id: self.model_id.clone(), message });
        if self.model_id.trim().is_empty() {
            return fail("model_id must not be empty".into());
        }
        match self.kind {
            BackendKind::Replay if self.fixture.is_none() => return fail("replay models need a fixture path".into()),
            BackendKind::OpenaiCompatible | BackendKind::LocalRuntime if self.endpoint.is_none() => {
                return fail("an endpoint URL is required".into())
            }
            _ => {}
        }
        let s = &self.sampling;
        if !(s.temperature >= 0.0 && s.temperature.is_finite()) {
            return fail(format!("temperature must be >= 0, got {}", s.temperature));
        }
        if !(s.top_p > 0.0 && s.top_p <= 1.0) {
            return fail(format!("top_p must be in (0, 1], got {}", s.top_p));
        }
        if s.max_tokens == 0 {
            return fail("max_tokens must be positive".into());
        }
        if self.retry.max_attempts == 0 {
            return fail("retry.max_attempts must be at least 1".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return fail("timeout_secs must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

/// One completion with its generation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub model_id: String,
    /// Raw completion text, never post-processed.
    pub text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_counts: Option<TokenCounts>,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub sampling: Sampling,
    /// Distinguishes repeated draws for the same prompt. Replay keys on it;
    /// live backends offset a fixed seed by it.
    pub sample_index: u32,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, sampling: Sampling) -> Self {
        GenerationRequest { prompt: prompt.into(), sampling, sample_index: 0 }
    }

    pub fn sample(mut self, index: u32) -> Self {
        self.sample_index = index;
        self
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("model {model_id}: request failed after {attempts} attempt(s): {message}")]
    Exhausted { model_id: String, attempts: u32, message: String },
    #[error("model {model_id}: configuration error: {message}")]
    Config { model_id: String, message: String },
    #[error("model {model_id}: missing credentials, set the {var} environment variable")]
    MissingCredential { model_id: String, var: String },
    #[error("no fixture for model {model_id}, prompt {prompt_hash}, sample {sample}")]
    FixtureMissing { model_id: String, prompt_hash: String, sample: u32 },
    #[error("conflicting fixture for model {model_id}, prompt {prompt_hash}, sample {sample}")]
    FixtureConflict { model_id: String, prompt_hash: String, sample: u32 },
    #[error("fixture store {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fixture store {path}, line {line}: {message}")]
    FixtureParse { path: PathBuf, line: usize, message: String },
    #[error("no backend registered for model {0}")]
    UnknownModel(String),
}

/// SHA-256 of the UTF-8 prompt, lowercase hex.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// A source of completions. Implementations must be safe to call concurrently.
pub trait Backend: Send + Sync {
    fn generate(&self, spec: &ModelSpec, request: &GenerationRequest) -> Result<ModelOutput, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn generate(&self, spec: &ModelSpec, request: &GenerationRequest) -> Result<ModelOutput, BackendError> {
        (**self).generate(spec, request)
    }
}

/// Backend backed by a closure. Handy for scripted models and tests.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ModelSpec, &GenerationRequest) -> Result<ModelOutput, BackendError> + Send + Sync,
{
    fn generate(&self, spec: &ModelSpec, request: &GenerationRequest) -> Result<ModelOutput, BackendError> {
        (self.0)(spec, request)
    }
}

/// The models of a run, each bound to the backend that serves it.
#[derive(Clone, Default)]
pub struct ModelPool {
    entries: BTreeMap<String, (ModelSpec, Arc<dyn Backend>)>,
}

impl ModelPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spec: ModelSpec, backend: Arc<dyn Backend>) {
        self.entries.insert(spec.model_id.clone(), (spec, backend));
    }

    pub fn with(mut self, spec: ModelSpec, backend: Arc<dyn Backend>) -> Self {
        self.insert(spec, backend);
        self
    }

    pub fn spec(&self, model_id: &str) -> Option<&ModelSpec> {
        self.entries.get(model_id).map(|(spec, _)| spec)
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.entries.contains_key(model_id)
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn generate(&self, model_id: &str, request: &GenerationRequest) -> Result<ModelOutput, BackendError> {
        let (spec, backend) =
            self.entries.get(model_id).ok_or_else(|| BackendError::UnknownModel(model_id.to_string()))?;
        backend.generate(spec, request)
    }
}

impl std::fmt::Debug for ModelPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelPool").field("models", &self.entries.keys().collect::<Vec<_>>()).finish()
    }
}
