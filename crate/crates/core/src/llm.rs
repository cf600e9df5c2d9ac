//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::ModelConfig;
use crate::prompting::PromptBundle;

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmError {
    #[error("environment variable {0} with the API key is not set")]
    MissingApiKey(String),
    #[error("authentication failed (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    TransientExhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("http client error: {0}")]
    Client(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub narrative_id: String,
    pub model_name: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
    pub attempts: u32,
    pub cost: f64,
}

impl UsageRecord {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Per-1k-token pricing, rounded half-up to 4 decimals.
pub fn request_cost(prompt_tokens: u64, completion_tokens: u64, cfg: &ModelConfig) -> f64 {
    let raw = prompt_tokens as f64 / 1000.0 * cfg.price_per_1k_prompt_tokens
        + completion_tokens as f64 / 1000.0 * cfg.price_per_1k_completion_tokens;
    round4(raw)
}

fn round4(x: f64) -> f64 {
    ((x * 10_000.0) + 0.5 + 1e-9).floor() / 10_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub response_text: String,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub narrative_id: String,
    pub result: Result<Completion, LlmError>,
}

/// Totals over a batch of requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub requests: u64,
    pub failed: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub cost: f64,
    pub currency: String,
    /// Wall time of the whole batch.
    pub wall_time_ms: u64,
    /// Longest single request.
    pub max_request_ms: u64,
}

impl Ledger {
    pub fn from_records<'a>(
        records: impl IntoIterator<Item = &'a UsageRecord>,
        currency: &str,
        wall_time_ms: u64,
    ) -> Self {
        let mut ledger = Ledger {
            currency: currency.to_string(),
            wall_time_ms,
            ..Default::default()
        };
        let mut cost = 0.0;
        for r in records {
            ledger.requests += 1;
            ledger.prompt_tokens += r.prompt_tokens;
            ledger.completion_tokens += r.completion_tokens;
            cost += r.cost;
            ledger.max_request_ms = ledger.max_request_ms.max(r.wall_time_ms);
        }
        ledger.total_tokens = ledger.prompt_tokens + ledger.completion_tokens;
        ledger.cost = round4(cost);
        ledger.wall_time_ms = ledger.wall_time_ms.max(ledger.max_request_ms);
        ledger
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub entries: Vec<BatchEntry>,
    pub ledger: Ledger,
}

enum AttemptError {
    Transient(String),
    Fatal(LlmError),
}

pub struct LlmClient {
    cfg: ModelConfig,
    http: reqwest::Client,
    api_key: Option<String>,
}

impl LlmClient {
    /// Reads the API key from the profile's environment variable.
    pub fn from_env(cfg: ModelConfig) -> Result<Self, LlmError> {
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&cfg.api_key_env)
                    .map_err(|_| LlmError::MissingApiKey(cfg.api_key_env.clone()))?,
            )
        };
        Self::with_api_key(cfg, api_key)
    }

    pub fn with_api_key(cfg: ModelConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.request_timeout_secs.max(1)))
            .build()
            .map_err(|e| LlmError::Client(e.to_string()))?;
        Ok(Self { cfg, http, api_key })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.cfg.base_url.trim_end_matches('/')
        )
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.cfg.retry_base_delay_ms as f64 * 2f64.powi(attempt as i32 - 1);
        let jitter = rand::rng().random_range(0.0..0.25);
        Duration::from_millis((base * (1.0 + jitter)) as u64)
    }

    async fn attempt(&self, body: &Value) -> Result<(String, u64, u64), AttemptError> {
        let mut req = self.http.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Err(AttemptError::Transient(e.to_string()))
            }
            Err(e) => return Err(AttemptError::Fatal(LlmError::Client(e.to_string()))),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Err(AttemptError::Transient(e.to_string())),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("HTTP {status}")));
        }
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(LlmError::Auth {
                status: status.as_u16(),
                body: text,
            }));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(LlmError::Rejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        parse_completion(&text).map_err(AttemptError::Fatal)
    }

    /// One chat-completion request with retries on 429, 5xx and transport
    /// failures.
    pub async fn complete(&self, prompt: &PromptBundle) -> Result<Completion, LlmError> {
        let body = json!({
            "model": self.cfg.model_name,
            "messages": [{"role": "user", "content": prompt.user_message()}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        });
        let started = Instant::now();
        let max_attempts = self.cfg.max_retries + 1;
        let mut attempt = 1;
        loop {
            match self.attempt(&body).await {
                Ok((response_text, prompt_tokens, completion_tokens)) => {
                    return Ok(Completion {
                        response_text,
                        usage: UsageRecord {
                            narrative_id: prompt.narrative_id.clone(),
                            model_name: self.cfg.model_name.clone(),
                            prompt_tokens,
                            completion_tokens,
                            wall_time_ms: started.elapsed().as_millis() as u64,
                            attempts: attempt,
                            cost: request_cost(prompt_tokens, completion_tokens, &self.cfg),
                        },
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(last)) if attempt >= max_attempts => {
                    return Err(LlmError::TransientExhausted {
                        attempts: attempt,
                        last,
                    })
                }
                Err(AttemptError::Transient(reason)) => {
                    log::warn!(
                        "{}: attempt {attempt} failed ({reason}), retrying",
                        prompt.narrative_id
                    );
                    tokio::time::sleep(self.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    /// Runs at most `max_in_flight` requests at a time. Entries come back in
    /// input order; a failed narrative is an entry, never a batch error.
    pub async fn run_batch(&self, prompts: &[PromptBundle]) -> BatchOutcome {
        let started = Instant::now();
        let entries: Vec<BatchEntry> = stream::iter(prompts)
            .map(|p| async move {
                BatchEntry {
                    narrative_id: p.narrative_id.clone(),
                    result: self.complete(p).await,
                }
            })
            .buffered(self.cfg.max_in_flight.max(1))
            .collect()
            .await;
        let wall = started.elapsed().as_millis() as u64;
        let mut ledger = Ledger::from_records(
            entries
                .iter()
                .filter_map(|e| e.result.as_ref().ok())
                .map(|c| &c.usage),
            &self.cfg.currency_label,
            wall,
        );
        ledger.failed = entries.iter().filter(|e| e.result.is_err()).count() as u64;
        ledger.requests += ledger.failed;
        BatchOutcome { entries, ledger }
    }
}

/// Extract visible text and token usage. A separate reasoning channel such
/// as `reasoning_content` is ignored.
fn parse_completion(body: &str) -> Result<(String, u64, u64), LlmError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| LlmError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    };
    if text.trim().is_empty() {
        return Err(LlmError::MalformedResponse(
            "choices[0].message.content is missing or empty".into(),
        ));
    }
    let usage = &v["usage"];
    let prompt_tokens = usage["prompt_tokens"].as_u64().unwrap_or(0);
    let completion_tokens = usage["completion_tokens"].as_u64().unwrap_or(0);
    Ok((text, prompt_tokens, completion_tokens))
}
