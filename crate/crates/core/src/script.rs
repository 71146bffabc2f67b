//! Scripted conversations: a user, the messages they send, the expected
//! phase after each one, and the backend scenario that answers them.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analyzers::Analyzers;
use crate::clock::{Clock, IdSource};
use crate::dialogue::{Engine, EngineError, Generated, Phase, Session, TurnOutcome};
use crate::emotion::EmotionCatalog;
use crate::gateway::{BackendConfig, Gateway, Scenario, ScenarioError, ScriptedBackend, Tier};
use crate::prompt::{Composer, PromptAssets};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptUser {
    pub name: String,
    pub age: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptMessage {
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub picks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_picker: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_ended: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub locale: String,
    pub user: ScriptUser,
    pub messages: Vec<ScriptMessage>,
    pub backend: Scenario,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script {name}: {source}")]
    Parse {
        name: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("message {index}: {source}")]
    Engine {
        index: usize,
        #[source]
        source: EngineError,
    },
    #[error("message {index}: {message}")]
    Expectation { index: usize, message: String },
}

const BUNDLED: [(&str, &str); 4] = [
    ("positive_record", include_str!("../scenarios/positive_record.json")),
    ("negative_picker_loop", include_str!("../scenarios/negative_picker_loop.json")),
    ("help_from_label", include_str!("../scenarios/help_from_label.json")),
    ("regret_label", include_str!("../scenarios/regret_label.json")),
];

/// The scripts shipped with the crate.
pub fn bundled() -> Vec<ConversationScript> {
    BUNDLED
        .iter()
        .map(|(name, text)| ConversationScript::from_json(name, text).expect("bundled script is valid"))
        .collect()
}

/// Model ids the scripted engine reports.
pub const SCRIPTED_GENERATOR: &str = "scripted-generator";
pub const SCRIPTED_ANALYZER: &str = "scripted-analyzer";

/// Builds an engine with the bundled catalog, assets, and few-shot examples
/// talking to `backend` on both tiers.
pub fn scripted_engine(
    backend: Arc<ScriptedBackend>,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
) -> Engine {
    let mut g = BackendConfig::for_tier(Tier::Generator, SCRIPTED_GENERATOR);
    let mut a = BackendConfig::for_tier(Tier::Analyzer, SCRIPTED_ANALYZER);
    for cfg in [&mut g, &mut a] {
        cfg.retry_base_delay_ms = 1;
        cfg.max_retries = 0;
    }
    let composer = Composer::for_generator(PromptAssets::bundled(), EmotionCatalog::bundled(), &g);
    let gateway = Arc::new(Gateway::shared(g, a, backend).expect("scripted configs are valid"));
    let analyzers = Arc::new(Analyzers::bundled(gateway.clone()));
    Engine::new(gateway, analyzers, Arc::new(composer), clock, ids)
}

/// Everything a script run produced.
#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub session: Session,
    pub greeting: Generated,
    pub outcomes: Vec<TurnOutcome>,
}

impl ConversationScript {
    pub fn from_json(name: &str, text: &str) -> Result<Self, ScriptError> {
        serde_json::from_str(text).map_err(|source| ScriptError::Parse {
            name: name.to_string(),
            source,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&path.display().to_string(), &text)
    }

    pub fn backend(&self) -> Result<ScriptedBackend, ScriptError> {
        Ok(ScriptedBackend::new(self.backend.clone())?)
    }

    /// Plays every message against `engine`, checking the expectations.
    pub async fn run(&self, engine: &Engine) -> Result<ScriptRun, ScriptError> {
        let (mut session, greeting) = engine
            .create_session(&self.user.name, self.user.age, Some(&self.locale))
            .await
            .map_err(|source| ScriptError::Engine { index: 0, source })?;
        let mut outcomes = Vec::with_capacity(self.messages.len());
        for (i, m) in self.messages.iter().enumerate() {
            let index = i + 1;
            let out = engine
                .handle_user_message(&mut session, &m.text, &m.picks)
                .await
                .map_err(|source| ScriptError::Engine { index, source })?;
            let fail = |message: String| Err(ScriptError::Expectation { index, message });
            if let Some(p) = m.expect_phase {
                if out.phase_after != p {
                    return fail(format!("expected phase {p}, got {}", out.phase_after));
                }
            }
            if let Some(p) = m.expect_picker {
                if out.picker.is_some() != p {
                    return fail(format!("expected picker {p}, got {}", out.picker.is_some()));
                }
            }
            let ended = m.expect_ended.unwrap_or(false);
            if out.session_ended != ended {
                return fail(format!("expected ended {ended}, got {}", out.session_ended));
            }
            outcomes.push(out);
        }
        Ok(ScriptRun {
            session,
            greeting,
            outcomes,
        })
    }
}
