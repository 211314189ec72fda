//! OpenAI-compatible chat-completions client.
//!
//! Local runtimes such as Ollama expose the same protocol under `/v1`, so one
//! client covers remote providers and local models alike.

use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, GenerationRequest, ModelOutput, ModelSpec, TokenCounts};

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum AttemptError {
    Retryable(String),
    Fatal(BackendError),
}

/// Blocking client for `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct ChatCompletionsBackend {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl ChatCompletionsBackend {
    pub fn new(spec: &ModelSpec, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(spec.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        ChatCompletionsBackend { agent, api_key }
    }

    /// Reads the bearer token from `COLAB_API_KEY_<ID>`. Hosted endpoints
    /// require it; local runtimes accept its absence.
    pub fn from_env(spec: &ModelSpec) -> Result<Self, BackendError> {
        let var = spec.api_key_var();
        let key = std::env::var(&var).ok().filter(|k| !k.is_empty());
        if key.is_none() && spec.kind == BackendKind::OpenaiCompatible {
            return Err(BackendError::MissingCredential { model_id: spec.model_id.clone(), var });
        }
        Ok(Self::new(spec, key))
    }

    fn url(spec: &ModelSpec) -> Result<String, BackendError> {
        let endpoint = spec.endpoint.as_deref().ok_or_else(|| BackendError::Config {
            model_id: spec.model_id.clone(),
            message: "no endpoint configured".into(),
        })?;
        Ok(format!("{}/chat/completions", endpoint.trim_end_matches('/')))
    }

    fn attempt(
        &self,
        spec: &ModelSpec,
        url: &str,
        request: &GenerationRequest,
    ) -> Result<(String, Option<TokenCounts>), AttemptError> {
        let sampling = &request.sampling;
        let body = ChatRequest {
            model: spec.provider_model(),
            messages: [Message { role: "user", content: &request.prompt }],
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            max_tokens: sampling.max_tokens,
            seed: sampling.seed.map(|s| s.wrapping_add(u64::from(request.sample_index))),
        };
        let mut call = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| AttemptError::Retryable(format!("transport: {e}")))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            let detail: String = detail.chars().take(300).collect();
            let message = format!("HTTP {status}: {detail}");
            return if status == 408 || status == 429 || status >= 500 {
                Err(AttemptError::Retryable(message))
            } else {
                Err(AttemptError::Fatal(BackendError::Config { model_id: spec.model_id.clone(), message }))
            };
        }
        let parsed: ChatResponse =
            response.body_mut().read_json().map_err(|e| AttemptError::Retryable(format!("malformed response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AttemptError::Retryable("response has no choices[0].message.content".into()))?;
        let counts = parsed.usage.map(|u| TokenCounts { prompt: u.prompt_tokens, completion: u.completion_tokens });
        Ok((text, counts))
    }
}

impl Backend for ChatCompletionsBackend {
    fn generate(&self, spec: &ModelSpec, request: &GenerationRequest) -> Result<ModelOutput, BackendError> {
        let url = Self::url(spec)?;
        let max_attempts = spec.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            let started = Instant::now();
            match self.attempt(spec, &url, request) {
                Ok((text, token_counts)) => {
                    return Ok(ModelOutput {
                        model_id: spec.model_id.clone(),
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        token_counts,
                        attempt,
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(message)) => {
                    log::warn!("{}: attempt {attempt}/{max_attempts} failed: {message}", spec.model_id);
                    last_error = message;
                    if attempt < max_attempts {
                        thread::sleep(spec.retry.delay_before_retry(attempt));
                    }
                }
            }
        }
        Err(BackendError::Exhausted { model_id: spec.model_id.clone(), attempts: max_attempts, message: last_error })
    }
}
