//! Live backend speaking the OpenAI-style chat-completions wire format.

use std::path::Path;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendCall, BackendError, CompletionResult, FinishReason, Usage};

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: reqwest::Url,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: Option<String>) -> Result<Self, BackendError> {
        let endpoint = reqwest::Url::parse(endpoint)
            .map_err(|e| BackendError::Fatal(format!("bad endpoint {endpoint:?}: {e}")))?;
        Ok(Self {
            client: reqwest::Client::new(),
            endpoint,
            api_key,
        })
    }
}

/// Looks up the secret named `key_ref`: first the environment, then a
/// `NAME=value` secrets file if one is given.
pub fn resolve_api_key(key_ref: &str, secrets_file: Option<&Path>) -> Option<String> {
    if let Ok(v) = std::env::var(key_ref) {
        if !v.trim().is_empty() {
            return Some(v.trim().to_string());
        }
    }
    let text = std::fs::read_to_string(secrets_file?).ok()?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key_ref)
        .map(|(_, v)| v.trim().trim_matches('"').to_string())
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn classify_status(status: u16, body: &str) -> BackendError {
    match status {
        401 | 403 => BackendError::Auth(format!("HTTP {status}")),
        408 | 409 | 429 | 500..=599 => BackendError::Transient(format!("HTTP {status}")),
        400 if body.contains("content_filter") || body.contains("content_policy") => {
            BackendError::ContentPolicy(format!("HTTP {status}"))
        }
        _ => BackendError::Fatal(format!("HTTP {status}: {}", body.chars().take(200).collect::<String>())),
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn send(&self, call: BackendCall<'_>) -> Result<CompletionResult, BackendError> {
        // Widen through the shortest decimal form so 0.7 goes out as 0.7.
        let temperature: f64 = call.params.temperature.to_string().parse().unwrap_or(0.0);
        let body = json!({
            "model": call.model_id,
            "messages": call.messages,
            "temperature": temperature,
            "max_tokens": call.params.max_output_tokens,
        });
        let mut req = self.client.post(self.endpoint.clone()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .text()
            .await
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("unreadable response body: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Fatal("response has no choices".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("stop") | None => FinishReason::Normal,
            Some("length") => FinishReason::Length,
            Some("content_filter") => FinishReason::ContentFilter,
            Some(_) => FinishReason::Other,
        };
        if finish_reason == FinishReason::ContentFilter {
            return Err(BackendError::ContentPolicy("finish_reason content_filter".into()));
        }
        let content = choice.message.content.unwrap_or_default();
        if finish_reason == FinishReason::Normal && content.is_empty() {
            return Err(BackendError::Fatal("empty completion".into()));
        }
        let usage = wire
            .usage
            .map(|u| Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(CompletionResult {
            content,
            finish_reason,
            usage,
        })
    }
}
