//! Uniform client over chat-completion backends.
//!
//! Two tiers are configured: a capable generator for user-facing replies and
//! a faster analyzer for summary extraction. Each tier carries its own model
//! id, sampling parameters, and context budget. Requests are budget-checked
//! before any network call and transient failures are retried with
//! exponential backoff.

mod config;
mod http;
mod scripted;
pub mod tokens;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

pub use config::{BackendConfig, ConfigError, ENV_ANALYZER_MODEL, ENV_API_KEY, ENV_GENERATOR_MODEL};
pub use http::{resolve_api_key, HttpBackend};
pub use scripted::{
    FaultKind, MatchKind, RecordedCall, RecordingBackend, Scenario, ScenarioError, ScenarioStep,
    ScriptedBackend, StepFault, StepMatch,
};
pub use tokens::{estimate_tokens, EstimatorRegistry, HeuristicEstimator, TokenEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Generator,
    Analyzer,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Generator => "generator",
            Tier::Analyzer => "analyzer",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    /// Overrides the tier's configured sampling parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GenerationParams>,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            params: None,
        }
    }

    pub fn last_content(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Normal,
    Length,
    ContentFilter,
    Other,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// What a backend is asked to do for one attempt.
#[derive(Debug, Clone, Copy)]
pub struct BackendCall<'a> {
    pub tier: Tier,
    pub model_id: &'a str,
    pub messages: &'a [ChatMessage],
    pub params: GenerationParams,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("request timed out")]
    Timeout,
    #[error("content policy rejection: {0}")]
    ContentPolicy(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend error: {0}")]
    Fatal(String),
    #[error("scripted miss at {step}: {detail}")]
    ScriptedMiss { step: String, detail: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_) | BackendError::Timeout)
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn send(&self, call: BackendCall<'_>) -> Result<CompletionResult, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    /// `None` on success.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub result: CompletionResult,
    pub tier: Tier,
    pub model_id: String,
    pub attempts: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("request has no messages")]
    EmptyRequest,
    #[error("request needs ~{estimated} tokens plus {reserved} for output, over the {limit}-token context")]
    Budget {
        estimated: usize,
        reserved: u32,
        limit: u32,
    },
    #[error("{tier} backend failed after {} attempt(s): {last}", attempts.len())]
    Upstream {
        tier: Tier,
        attempts: Vec<AttemptRecord>,
        last: BackendError,
    },
    #[error("{tier} backend misconfigured: {message}")]
    Config { tier: Tier, message: String },
}

/// Per-message framing overhead added to the content estimate.
const MESSAGE_OVERHEAD_TOKENS: usize = 4;

struct TierSlot {
    config: BackendConfig,
    backend: Arc<dyn Backend>,
    input_tokens: AtomicU64,
    output_tokens: AtomicU64,
}

pub struct Gateway {
    generator: TierSlot,
    analyzer: TierSlot,
    estimators: EstimatorRegistry,
    permits: Option<Semaphore>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("generator", &self.generator.config.model_id)
            .field("analyzer", &self.analyzer.config.model_id)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        generator: (BackendConfig, Arc<dyn Backend>),
        analyzer: (BackendConfig, Arc<dyn Backend>),
    ) -> Result<Self, ConfigError> {
        for (cfg, tier) in [(&generator.0, Tier::Generator), (&analyzer.0, Tier::Analyzer)] {
            cfg.validate()?;
            if cfg.tier != tier {
                return Err(ConfigError {
                    tier,
                    message: format!("config declares tier {}", cfg.tier),
                });
            }
        }
        let slot = |(config, backend): (BackendConfig, Arc<dyn Backend>)| TierSlot {
            config,
            backend,
            input_tokens: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        };
        Ok(Self {
            generator: slot(generator),
            analyzer: slot(analyzer),
            estimators: EstimatorRegistry::default(),
            permits: None,
        })
    }

    /// Both tiers answered by one backend (typically a scripted one).
    pub fn shared(
        generator: BackendConfig,
        analyzer: BackendConfig,
        backend: Arc<dyn Backend>,
    ) -> Result<Self, ConfigError> {
        Self::new((generator, backend.clone()), (analyzer, backend))
    }

    pub fn with_concurrency_limit(mut self, max_in_flight: usize) -> Self {
        self.permits = Some(Semaphore::new(max_in_flight.max(1)));
        self
    }

    pub fn with_estimator(mut self, model_id: &str, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimators.register(model_id, estimator);
        self
    }

    fn slot(&self, tier: Tier) -> &TierSlot {
        match tier {
            Tier::Generator => &self.generator,
            Tier::Analyzer => &self.analyzer,
        }
    }

    pub fn config(&self, tier: Tier) -> &BackendConfig {
        &self.slot(tier).config
    }

    pub fn estimate(&self, tier: Tier, text: &str) -> usize {
        self.estimators
            .estimate(text, &self.slot(tier).config.model_id)
    }

    pub fn estimate_request(&self, tier: Tier, messages: &[ChatMessage]) -> usize {
        messages
            .iter()
            .map(|m| self.estimate(tier, &m.content) + MESSAGE_OVERHEAD_TOKENS)
            .sum()
    }

    /// Cumulative usage recorded for `tier`.
    pub fn usage(&self, tier: Tier) -> Usage {
        let s = self.slot(tier);
        Usage {
            input_tokens: s.input_tokens.load(Ordering::Relaxed),
            output_tokens: s.output_tokens.load(Ordering::Relaxed),
        }
    }

    pub async fn complete(
        &self,
        tier: Tier,
        request: &CompletionRequest,
    ) -> Result<Completion, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::EmptyRequest);
        }
        let slot = self.slot(tier);
        let cfg = &slot.config;
        let params = request.params.unwrap_or(GenerationParams {
            temperature: cfg.temperature,
            max_output_tokens: cfg.max_output_tokens,
        });

        let estimated = self.estimate_request(tier, &request.messages);
        if estimated + params.max_output_tokens as usize > cfg.context_limit_tokens as usize {
            return Err(GatewayError::Budget {
                estimated,
                reserved: params.max_output_tokens,
                limit: cfg.context_limit_tokens,
            });
        }

        let _permit = match &self.permits {
            Some(sem) => Some(sem.acquire().await.expect("semaphore never closed")),
            None => None,
        };

        let call = BackendCall {
            tier,
            model_id: &cfg.model_id,
            messages: &request.messages,
            params,
        };
        let mut attempts = Vec::new();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let outcome =
                match tokio::time::timeout(cfg.request_timeout(), slot.backend.send(call)).await {
                    Ok(r) => r,
                    Err(_) => Err(BackendError::Timeout),
                };
            match outcome {
                Ok(result) => {
                    attempts.push(AttemptRecord {
                        attempt,
                        error: None,
                    });
                    slot.input_tokens
                        .fetch_add(result.usage.input_tokens, Ordering::Relaxed);
                    slot.output_tokens
                        .fetch_add(result.usage.output_tokens, Ordering::Relaxed);
                    return Ok(Completion {
                        result,
                        tier,
                        model_id: cfg.model_id.clone(),
                        attempts,
                    });
                }
                Err(err) => {
                    attempts.push(AttemptRecord {
                        attempt,
                        error: Some(err.to_string()),
                    });
                    if let BackendError::Auth(message) = &err {
                        return Err(GatewayError::Config {
                            tier,
                            message: message.clone(),
                        });
                    }
                    if !err.is_retryable() || attempt > cfg.max_retries {
                        tracing::warn!(%tier, attempts = attempt, error = %err, "completion failed");
                        return Err(GatewayError::Upstream {
                            tier,
                            attempts,
                            last: err,
                        });
                    }
                    let delay = cfg.retry_base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                    tracing::debug!(%tier, attempt, delay_ms = delay, error = %err, "retrying");
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                }
            }
        }
    }
}
