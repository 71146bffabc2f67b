//! Deterministic backend answering from a scenario file, plus a recorder that
//! captures live traffic into the same format.
//!
//! A scenario is an ordered array of steps. Each tier walks its own steps in
//! order: a request must match the tier's next unconsumed step (substring or
//! regex over the last message) or the call fails with a scripted miss that
//! names the step it was compared against.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::tokens::estimate_tokens;
use super::{Backend, BackendCall, BackendError, CompletionResult, FinishReason, Tier, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Substring,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMatch {
    pub kind: MatchKind,
    pub pattern: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Transient,
    Timeout,
    ContentPolicy,
    Auth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFault {
    pub kind: FaultKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tier: Tier,
    #[serde(rename = "match")]
    pub matcher: StepMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// Makes this step fail instead of answering (fault injection).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<StepFault>,
    /// Simulated backend latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scenario {
    pub steps: Vec<ScenarioStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("step {step}: invalid regex: {source}")]
    Regex {
        step: usize,
        #[source]
        source: regex::Error,
    },
    #[error("step {0}: needs either a response or a fault")]
    Empty(usize),
    #[error("reading scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

impl ScenarioStep {
    fn label(&self, index: usize) -> String {
        match &self.name {
            Some(n) => format!("step {} ({n})", index + 1),
            None => format!("step {}", index + 1),
        }
    }
}

/// One request observed by the scripted backend.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub tier: Tier,
    pub model_id: String,
    pub temperature: f32,
    pub last_message: String,
    /// Zero-based index of the step that answered, if any.
    pub step: Option<usize>,
}

enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(p) => text.contains(p.as_str()),
            Matcher::Regex(r) => r.is_match(text),
        }
    }
}

struct State {
    /// Next position in each tier's step list.
    cursor: [usize; 2],
    calls: Vec<RecordedCall>,
}

pub struct ScriptedBackend {
    scenario: Scenario,
    matchers: Vec<Matcher>,
    by_tier: [Vec<usize>; 2],
    state: Mutex<State>,
}

fn tier_slot(tier: Tier) -> usize {
    match tier {
        Tier::Generator => 0,
        Tier::Analyzer => 1,
    }
}

impl ScriptedBackend {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        let mut matchers = Vec::with_capacity(scenario.steps.len());
        let mut by_tier = [Vec::new(), Vec::new()];
        for (i, step) in scenario.steps.iter().enumerate() {
            if step.response.is_none() && step.fault.is_none() {
                return Err(ScenarioError::Empty(i + 1));
            }
            matchers.push(match step.matcher.kind {
                MatchKind::Substring => Matcher::Substring(step.matcher.pattern.clone()),
                MatchKind::Regex => Matcher::Regex(
                    Regex::new(&step.matcher.pattern)
                        .map_err(|source| ScenarioError::Regex { step: i + 1, source })?,
                ),
            });
            by_tier[tier_slot(step.tier)].push(i);
        }
        Ok(Self {
            scenario,
            matchers,
            by_tier,
            state: Mutex::new(State {
                cursor: [0, 0],
                calls: Vec::new(),
            }),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::new(Scenario::from_json(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.state.lock().unwrap().calls.clone()
    }

    /// Steps not yet consumed, per tier.
    pub fn remaining(&self, tier: Tier) -> usize {
        let slot = tier_slot(tier);
        let st = self.state.lock().unwrap();
        self.by_tier[slot].len() - st.cursor[slot]
    }

    /// Picks the step for `call` and advances the tier cursor, or explains
    /// the miss.
    fn select(&self, call: &BackendCall<'_>) -> Result<usize, BackendError> {
        let slot = tier_slot(call.tier);
        let last = call.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        let mut st = self.state.lock().unwrap();
        let mut record = RecordedCall {
            tier: call.tier,
            model_id: call.model_id.to_string(),
            temperature: call.params.temperature,
            last_message: last.to_string(),
            step: None,
        };

        let Some(&index) = self.by_tier[slot].get(st.cursor[slot]) else {
            st.calls.push(record);
            let closest = self.by_tier[slot]
                .last()
                .map(|&i| self.scenario.steps[i].label(i))
                .unwrap_or_else(|| "<no steps>".into());
            return Err(BackendError::ScriptedMiss {
                step: closest,
                detail: format!("scenario exhausted for {} tier", call.tier),
            });
        };
        if !self.matchers[index].is_match(last) {
            st.calls.push(record);
            let step = &self.scenario.steps[index];
            return Err(BackendError::ScriptedMiss {
                step: step.label(index),
                detail: format!(
                    "expected {:?} {:?} in last message {:?}",
                    step.matcher.kind,
                    step.matcher.pattern,
                    truncate(last, 120)
                ),
            });
        }
        st.cursor[slot] += 1;
        record.step = Some(index);
        st.calls.push(record);
        Ok(index)
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn send(&self, call: BackendCall<'_>) -> Result<CompletionResult, BackendError> {
        let index = self.select(&call)?;
        let step = &self.scenario.steps[index];
        if let Some(ms) = step.delay_ms {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        if let Some(fault) = &step.fault {
            let status = fault.status.map(|s| format!("HTTP {s}")).unwrap_or_default();
            return Err(match fault.kind {
                FaultKind::Transient => BackendError::Transient(format!("injected {status}")),
                FaultKind::Timeout => BackendError::Timeout,
                FaultKind::ContentPolicy => {
                    BackendError::ContentPolicy(format!("injected {status}"))
                }
                FaultKind::Auth => BackendError::Auth(format!("injected {status}")),
            });
        }
        let content = step.response.clone().unwrap_or_default();
        let usage = step.usage.unwrap_or_else(|| Usage {
            input_tokens: call
                .messages
                .iter()
                .map(|m| estimate_tokens(&m.content, call.model_id) as u64)
                .sum(),
            output_tokens: estimate_tokens(&content, call.model_id) as u64,
        });
        Ok(CompletionResult {
            content,
            finish_reason: FinishReason::Normal,
            usage,
        })
    }
}

/// Wraps another backend and records every successful exchange as a
/// scenario step that replays it.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    steps: Mutex<Vec<ScenarioStep>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            steps: Mutex::new(Vec::new()),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            steps: self.steps.lock().unwrap().clone(),
        }
    }
}

#[async_trait]
impl Backend for RecordingBackend {
    async fn send(&self, call: BackendCall<'_>) -> Result<CompletionResult, BackendError> {
        let result = self.inner.send(call).await?;
        let last = call.messages.last().map(|m| m.content.clone()).unwrap_or_default();
        self.steps.lock().unwrap().push(ScenarioStep {
            name: None,
            tier: call.tier,
            matcher: StepMatch {
                kind: MatchKind::Substring,
                pattern: last,
            },
            response: Some(result.content.clone()),
            usage: Some(result.usage),
            fault: None,
            delay_ms: None,
        });
        Ok(result)
    }
}
