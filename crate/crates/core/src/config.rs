//! Declarative pipeline configuration, one TOML section per stage.
//!
//! ```toml
//! [scheme]
//! segment_level = "line"
//! identifier_style = "center_2"
//! buckets = 100
//!
//! [sampling]
//! num_samples = 16
//!
//! [chunking]
//! limit = 6144
//!
//! [client]
//! kind = "replay"
//! fixture = "completions.json"
//! ```
//!
//! Relative paths are resolved against the config file's directory.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::evaluator::MatchConfig;
use crate::inference::{
    make_http_client, make_replay_client, ClientError, CompletionClient, HttpConfig, RetryPolicy, RunOptions,
    SamplingConfig, StaticClient,
};
use crate::prompt::{CoordinateScheme, DEFAULT_TASK_DESCRIPTION};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Replay,
    Http,
    Static,
}

impl std::str::FromStr for ClientKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replay" => Ok(ClientKind::Replay),
            "http" => Ok(ClientKind::Http),
            "static" => Ok(ClientKind::Static),
            _ => Err(ConfigError::Invalid(format!("unknown client kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub kind: ClientKind,
    /// Replay fixture file.
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub stop_sequences: bool,
    /// Completion text of the static client.
    pub text: String,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            kind: ClientKind::Replay,
            fixture: None,
            endpoint: None,
            timeout_secs: 120,
            stop_sequences: false,
            text: "{}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkingConfig {
    /// Prompt token budget; defaults to `sampling.max_input_tokens`.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub description: String,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self { description: DEFAULT_TASK_DESCRIPTION.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub parallel: usize,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self { parallel: 1, retry_attempts: 3, retry_base_delay_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub scheme: CoordinateScheme,
    pub sampling: SamplingConfig,
    pub chunking: ChunkingConfig,
    pub task: TaskConfig,
    pub client: ClientConfig,
    pub runtime: RuntimeConfig,
    pub evaluation: MatchConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut c = Self::from_toml(&text)?;
        c.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.client.fixture, &mut self.paths.schema, &mut self.paths.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sampling.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.chunking.limit == Some(0) {
            return Err(ConfigError::Invalid("chunking.limit must be positive".into()));
        }
        if self.runtime.parallel == 0 {
            return Err(ConfigError::Invalid("runtime.parallel must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.evaluation.coverage_threshold) {
            return Err(ConfigError::Invalid("evaluation.coverage_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Chunk budget in prompt tokens.
    pub fn limit(&self) -> usize {
        self.chunking.limit.unwrap_or(self.sampling.max_input_tokens)
    }

    /// Per-document inference options. `runtime.parallel` counts documents
    /// in flight, so prompts within a document run one at a time.
    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            parallelism: 1,
            retry: RetryPolicy {
                attempts: self.runtime.retry_attempts,
                base_delay: Duration::from_millis(self.runtime.retry_base_delay_ms),
            },
        }
    }

    pub fn make_client(&self) -> Result<Box<dyn CompletionClient>, ClientError> {
        let c = &self.client;
        Ok(match c.kind {
            ClientKind::Replay => {
                let path = c
                    .fixture
                    .as_ref()
                    .ok_or_else(|| ClientError::InvalidFixture("client.fixture is not set".into()))?;
                Box::new(make_replay_client(path)?)
            }
            ClientKind::Http => {
                let endpoint = c
                    .endpoint
                    .clone()
                    .ok_or_else(|| ClientError::Transport { status: None, message: "client.endpoint is not set".into() })?;
                Box::new(make_http_client(HttpConfig {
                    endpoint,
                    timeout_secs: c.timeout_secs,
                    stop_sequences: c.stop_sequences,
                })?)
            }
            ClientKind::Static => Box::new(StaticClient::new(c.text.clone())),
        })
    }
}
