//! K-sample completion over pluggable backends.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunker::TokenCounter;
use crate::prompt::{ChunkRef, Prompt, EXTRACTION_CLOSE};

pub const API_KEY_ENV: &str = "LMDX_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_k: u32,
    pub num_samples: usize,
    pub seed: u64,
    pub max_input_tokens: usize,
    pub max_output_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 0.5, top_k: 40, num_samples: 16, seed: 0, max_input_tokens: 6144, max_output_tokens: 2048 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidConfig(m.to_string()));
        if self.num_samples < 1 {
            return bad("num_samples must be at least 1");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be non-negative");
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    fn from_wire(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "stop" | "stop_sequence" | "end_turn" => FinishReason::Stop,
            "length" | "max_tokens" | "max_output_tokens" => FinishReason::Length,
            _ => FinishReason::Error,
        }
    }
}

/// One backend sample before it is tagged with its prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub prompt_ref: ChunkRef,
    pub sample_index: usize,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no replay fixture for prompt sha256 {0}")]
    FixtureMiss(String),
    #[error("replay fixture for prompt sha256 {sha256} has {have} completions, {need} requested")]
    ShortFixture { sha256: String, have: usize, need: usize },
    #[error("backend returned {got} completions, {want} requested")]
    WrongCount { got: usize, want: usize },
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
}

impl ClientError {
    /// Transport failures may be transient; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ClientError::Transport { .. })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("no prompts to run")]
    EmptyPrompts,
    #[error("prompt for {doc_id} chunk {chunk_index} has {tokens} tokens, over max_input_tokens {limit}")]
    BudgetExceeded { doc_id: String, chunk_index: usize, tokens: usize, limit: usize },
    #[error("could not build thread pool: {0}")]
    ThreadPool(String),
}

/// A completion backend. Must return exactly `config.num_samples` samples
/// or an error.
pub trait CompletionClient: Send + Sync {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<Generated>, ClientError>;
}

impl<T: CompletionClient + ?Sized> CompletionClient for Box<T> {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<Generated>, ClientError> {
        (**self).generate(prompt, config)
    }
}

impl<T: CompletionClient + ?Sized> CompletionClient for &T {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<Generated>, ClientError> {
        (**self).generate(prompt, config)
    }
}

/// Answers every prompt with the same text.
#[derive(Debug, Clone)]
pub struct StaticClient {
    pub text: String,
}

impl StaticClient {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl CompletionClient for StaticClient {
    fn generate(&self, _prompt: &str, config: &SamplingConfig) -> Result<Vec<Generated>, ClientError> {
        Ok(vec![Generated { text: self.text.clone(), finish_reason: FinishReason::Stop }; config.num_samples])
    }
}

/// Hex SHA-256 of a prompt with CRLF line endings folded to LF.
pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.replace("\r\n", "\n").as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayEntry {
    pub prompt_sha256: String,
    pub completions: Vec<String>,
}

/// Serves recorded completions keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    entries: HashMap<String, Vec<String>>,
}

impl ReplayClient {
    pub fn from_entries(entries: Vec<ReplayEntry>) -> Result<Self, ClientError> {
        let mut map = HashMap::new();
        for e in entries {
            let key = e.prompt_sha256.to_ascii_lowercase();
            if map.insert(key.clone(), e.completions).is_some() {
                return Err(ClientError::InvalidFixture(format!("duplicate prompt_sha256 {key}")));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn from_json(json: &str) -> Result<Self, ClientError> {
        let entries: Vec<ReplayEntry> =
            serde_json::from_str(json).map_err(|e| ClientError::InvalidFixture(e.to_string()))?;
        Self::from_entries(entries)
    }

    pub fn completions_for(&self, prompt: &str) -> Option<&[String]> {
        self.entries.get(&prompt_sha256(prompt)).map(Vec::as_slice)
    }
}

pub fn make_replay_client(path: impl AsRef<Path>) -> Result<ReplayClient, ClientError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ClientError::InvalidFixture(format!("{}: {e}", path.display())))?;
    ReplayClient::from_json(&text)
}

impl CompletionClient for ReplayClient {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<Generated>, ClientError> {
        let sha256 = prompt_sha256(prompt);
        let recorded = self.entries.get(&sha256).ok_or_else(|| ClientError::FixtureMiss(sha256.clone()))?;
        if recorded.len() < config.num_samples {
            return Err(ClientError::ShortFixture { sha256, have: recorded.len(), need: config.num_samples });
        }
        Ok(recorded[..config.num_samples]
            .iter()
            .map(|t| Generated { text: t.clone(), finish_reason: FinishReason::Stop })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Send the closing extraction tag as a stop sequence.
    #[serde(default)]
    pub stop_sequences: bool,
}

fn default_timeout_secs() -> u64 {
    120
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    top_k: u32,
    candidate_count: usize,
    seed: u64,
    max_output_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_sequences: Option<Vec<&'a str>>,
}

#[derive(Deserialize)]
struct WireResponse {
    candidates: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// Generic JSON text-completion endpoint, bearer-authenticated.
pub struct HttpClient {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("config", &self.config).finish_non_exhaustive()
    }
}

/// Reads the credential from the environment.
pub fn make_http_client(config: HttpConfig) -> Result<HttpClient, ClientError> {
    let api_key = std::env::var(API_KEY_ENV).map_err(|_| ClientError::Auth(format!("{API_KEY_ENV} is not set")))?;
    Ok(HttpClient::with_key(config, api_key))
}

impl HttpClient {
    pub fn with_key(config: HttpConfig, api_key: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(config.timeout_secs)).build();
        Self { config, api_key: api_key.into(), agent }
    }
}

impl CompletionClient for HttpClient {
    fn generate(&self, prompt: &str, config: &SamplingConfig) -> Result<Vec<Generated>, ClientError> {
        let body = WireRequest {
            prompt,
            temperature: config.temperature,
            top_k: config.top_k,
            candidate_count: config.num_samples,
            seed: config.seed,
            max_output_tokens: config.max_output_tokens,
            stop_sequences: self.config.stop_sequences.then(|| vec![EXTRACTION_CLOSE]),
        };
        let response = self
            .agent
            .post(&self.config.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(code @ (401 | 403), r)) => {
                return Err(ClientError::Auth(format!("HTTP {code}: {}", r.into_string().unwrap_or_default())))
            }
            Err(ureq::Error::Status(code, r)) => {
                return Err(ClientError::Transport {
                    status: Some(code),
                    message: r.into_string().unwrap_or_default(),
                })
            }
            Err(e) => return Err(ClientError::Transport { status: None, message: e.to_string() }),
        };
        let wire: WireResponse = response
            .into_json()
            .map_err(|e| ClientError::Transport { status: None, message: format!("bad response body: {e}") })?;
        if wire.candidates.len() != config.num_samples {
            return Err(ClientError::WrongCount { got: wire.candidates.len(), want: config.num_samples });
        }
        Ok(wire
            .candidates
            .into_iter()
            .map(|c| Generated {
                text: c.text,
                finish_reason: c.finish_reason.as_deref().map_or(FinishReason::Stop, FinishReason::from_wire),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallelism: 1, retry: RetryPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFailure {
    pub prompt_ref: ChunkRef,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InferenceOutput {
    /// Ordered by prompt, then sample index.
    pub completions: Vec<RawCompletion>,
    pub failures: Vec<PromptFailure>,
}

/// Everything before the first closing extraction tag, with trailing
/// whitespace removed when the tag is present.
pub fn strip_terminator(text: &str) -> &str {
    match text.find(EXTRACTION_CLOSE) {
        Some(i) => text[..i].trim_end(),
        None => text,
    }
}

fn generate_with_retry(
    client: &dyn CompletionClient,
    prompt: &str,
    config: &SamplingConfig,
    retry: RetryPolicy,
) -> Result<Vec<Generated>, (u32, ClientError)> {
    let mut delay = retry.base_delay;
    let mut attempt = 1;
    loop {
        let result = client.generate(prompt, config).and_then(|g| {
            if g.len() == config.num_samples {
                Ok(g)
            } else {
                Err(ClientError::WrongCount { got: g.len(), want: config.num_samples })
            }
        });
        match result {
            Ok(g) => return Ok(g),
            Err(e) if e.is_retryable() && attempt < retry.attempts.max(1) => {
                std::thread::sleep(delay);
                delay = delay.saturating_mul(2);
                attempt += 1;
            }
            Err(e) => return Err((attempt, e)),
        }
    }
}

/// Samples every prompt `config.num_samples` times.
///
/// Over-budget prompts abort the run before any request is sent. Client
/// failures are isolated per prompt and reported in
/// [`InferenceOutput::failures`].
pub fn run_inference(
    prompts: &[Prompt],
    config: &SamplingConfig,
    client: &dyn CompletionClient,
    counter: &dyn TokenCounter,
    options: RunOptions,
) -> Result<InferenceOutput, InferenceError> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(InferenceError::EmptyPrompts);
    }
    for p in prompts {
        let tokens = counter.count(&p.text);
        if tokens > config.max_input_tokens {
            return Err(InferenceError::BudgetExceeded {
                doc_id: p.chunk_ref.doc_id.clone(),
                chunk_index: p.chunk_ref.chunk_index,
                tokens,
                limit: config.max_input_tokens,
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| InferenceError::ThreadPool(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        prompts.par_iter().map(|p| generate_with_retry(client, &p.text, config, options.retry)).collect()
    });
    let mut out = InferenceOutput::default();
    for (p, r) in prompts.iter().zip(results) {
        match r {
            Ok(samples) => out.completions.extend(samples.into_iter().enumerate().map(|(i, g)| RawCompletion {
                text: strip_terminator(&g.text).to_string(),
                prompt_ref: p.chunk_ref.clone(),
                sample_index: i,
                finish_reason: g.finish_reason,
            })),
            Err((attempts, e)) => {
                out.failures.push(PromptFailure { prompt_ref: p.chunk_ref.clone(), attempts, error: e.to_string() })
            }
        }
    }
    Ok(out)
}
