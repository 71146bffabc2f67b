//! Phase analyzers and the safety screen.
//!
//! Each analyzer renders the dialogue into a chain-of-thought prompt with
//! few-shot examples, sends it to the analyzer tier, and reads the JSON
//! object on the final line of the answer. Picker selections are folded into
//! the Label summary directly from the history so they never depend on the
//! model.

mod fewshot;
mod parse;
mod safety;
mod summary;

use std::sync::{Arc, Mutex};

use serde::Deserialize;

pub use fewshot::{FewShotError, FewShotExample, FewShotStore};
pub use parse::extract_final_json;
pub use safety::{SafetyCategory, SafetyFlag, SafetyLexicon};
pub use summary::{
    ExploreSummary, FindSummary, LabelEmotion, LabelSummary, PhaseSummary, RecordSummary,
    ShareSummary, REFUSAL_MARKER,
};

use crate::dialogue::{Phase, Role, Turn};
use crate::emotion::{EmotionCatalog, Valence};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError, Tier};

#[derive(Debug, thiserror::Error)]
pub enum AnalyzerError {
    #[error("{phase} analyzer output could not be parsed after a reformat retry")]
    Unparseable { phase: Phase, raw: String },
    #[error("analyzer contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// An operator-facing problem that did not stop the conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationalAlert {
    pub source: &'static str,
    pub message: String,
}

/// An emotion as the analyzer reported it, before valence resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionMention {
    pub text: String,
    /// The analyzer's contextual negative/positive judgment, if it gave one.
    pub contextual_negative: Option<bool>,
}

pub struct Analyzers {
    gateway: Arc<Gateway>,
    few_shots: FewShotStore,
    lexicon: SafetyLexicon,
    alerts: Mutex<Vec<OperationalAlert>>,
}

const REFORMAT_INSTRUCTION: &str = "Your previous answer could not be parsed. Reply with only \
the JSON object on a single line, using exactly the required fields.";

impl Analyzers {
    pub fn new(gateway: Arc<Gateway>, few_shots: FewShotStore, lexicon: SafetyLexicon) -> Self {
        Self {
            gateway,
            few_shots,
            lexicon,
            alerts: Mutex::new(Vec::new()),
        }
    }

    pub fn bundled(gateway: Arc<Gateway>) -> Self {
        Self::new(gateway, FewShotStore::bundled(), SafetyLexicon::bundled())
    }

    /// Alerts raised so far, oldest first.
    pub fn alerts(&self) -> Vec<OperationalAlert> {
        self.alerts.lock().unwrap().clone()
    }

    fn raise(&self, alert: OperationalAlert) {
        tracing::error!(source = alert.source, message = %alert.message, "operational alert");
        self.alerts.lock().unwrap().push(alert);
    }

    /// Extracts the summary for `phase` from the full dialogue history.
    pub async fn analyze(
        &self,
        phase: Phase,
        history: &[Turn],
        catalog: &EmotionCatalog,
    ) -> Result<PhaseSummary, AnalyzerError> {
        if history.is_empty() {
            return Err(AnalyzerError::Contract("history is empty".into()));
        }
        let spec = phase_spec(phase)
            .ok_or_else(|| AnalyzerError::Contract(format!("no analyzer for phase {phase}")))?;

        let system = analyzer_system_prompt(spec, self.few_shots.examples(phase));
        let user = format!("Phase: {phase}\nDialogue:\n{}", render_transcript(history));
        let mut messages = vec![ChatMessage::system(system), ChatMessage::user(user)];

        let raw = self.ask(&messages).await?;
        let value = match parse_payload(phase, &raw) {
            Some(v) => v,
            None => {
                messages.push(ChatMessage::assistant(raw));
                messages.push(ChatMessage::user(REFORMAT_INSTRUCTION));
                let retry = self.ask(&messages).await?;
                parse_payload(phase, &retry)
                    .ok_or(AnalyzerError::Unparseable { phase, raw: retry })?
            }
        };

        Ok(match value {
            RawPayload::Explore(r) => PhaseSummary::Explore(ExploreSummary {
                key_event_shared: r.key_event_shared,
                key_event_description: r.key_event_description.filter(|d| !d.trim().is_empty()),
            }),
            RawPayload::Label(r) => {
                PhaseSummary::Label(self.build_label(r, history, catalog).await)
            }
            RawPayload::Find(r) => {
                let mut solutions: Vec<String> = r
                    .solutions
                    .into_iter()
                    .filter(|s| !s.trim().is_empty())
                    .collect();
                if r.user_declined && !solutions.iter().any(|s| s == REFUSAL_MARKER) {
                    solutions.push(REFUSAL_MARKER.to_string());
                }
                // An explored verdict needs something to show for it.
                let solutions_explored =
                    (r.solutions_explored || r.user_declined) && !solutions.is_empty();
                PhaseSummary::Find(FindSummary {
                    others_involved: r.others_involved,
                    others_feelings_discussed: r.others_feelings_discussed,
                    solutions,
                    solutions_explored,
                })
            }
            RawPayload::Record(r) => {
                let complete = r.benefits_explained && r.sample_diary_offered;
                PhaseSummary::Record(RecordSummary {
                    keeps_diary_asked: r.keeps_diary_asked,
                    benefits_explained: r.benefits_explained,
                    sample_diary_offered: r.sample_diary_offered,
                    diary_discussed: complete && r.diary_discussed.unwrap_or(true),
                })
            }
            RawPayload::Share(r) => PhaseSummary::Share(ShareSummary {
                already_shared_with_parents: r.already_shared_with_parents,
                sharing_encouraged_or_praised: r.sharing_encouraged_or_praised,
                new_event_requested: r.new_event_requested,
                user_done: r.user_done,
            }),
        })
    }

    async fn ask(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        let req = CompletionRequest::new(messages.to_vec());
        Ok(self.gateway.complete(Tier::Analyzer, &req).await?.result.content)
    }

    async fn build_label(
        &self,
        raw: RawLabel,
        history: &[Turn],
        catalog: &EmotionCatalog,
    ) -> LabelSummary {
        let picks = picks_in_current_label_visit(history, catalog);

        // Model-reported emotions first, normalized to catalog ids and
        // deduplicated; picks the model did not mention follow in pick order.
        let mut drafts: Vec<(String, bool, bool, Option<bool>)> = Vec::new();
        for e in raw.emotions {
            let text = e.name.trim();
            if text.is_empty() {
                continue;
            }
            let key = catalog
                .resolve(text)
                .map(|c| c.id.clone())
                .unwrap_or_else(|| text.to_lowercase());
            if let Some(existing) = drafts.iter_mut().find(|d| d.0 == key) {
                existing.2 |= e.acknowledged;
                continue;
            }
            let from_picker = picks.contains(&key);
            drafts.push((key, from_picker, e.acknowledged, e.is_negative));
        }
        for id in picks {
            if !drafts.iter().any(|d| d.0 == id) {
                drafts.push((id, true, false, None));
            }
        }

        let mut emotions = Vec::with_capacity(drafts.len());
        for (id, from_picker, acknowledged, contextual) in drafts {
            let mention = EmotionMention {
                text: id.clone(),
                contextual_negative: contextual,
            };
            let is_negative = self.classify_valence(&mention, catalog, history).await;
            emotions.push(LabelEmotion {
                id_or_free_text: id,
                from_picker,
                acknowledged,
                is_negative,
            });
        }
        LabelSummary {
            emotions,
            user_struggling_to_describe: raw.user_struggling_to_describe,
        }
    }

    /// Contextual judgment first, then a non-ambiguous catalog default, then
    /// a binary question to the analyzer tier. If none of those yields an
    /// answer the emotion is treated as negative so the session probes it
    /// further.
    pub async fn classify_valence(
        &self,
        emotion: &EmotionMention,
        catalog: &EmotionCatalog,
        context: &[Turn],
    ) -> bool {
        if let Some(neg) = emotion.contextual_negative {
            return neg;
        }
        match catalog.resolve(&emotion.text).map(|e| e.default_valence) {
            Some(Valence::Positive) => return false,
            Some(Valence::Negative) => return true,
            Some(Valence::Ambiguous) | None => {}
        }

        let system = format!(
            "Decide whether the emotion \"{}\" is negative or positive for the user in the \
             dialogue below. Think briefly, then on the final line output exactly one JSON \
             object: {{\"is_negative\": true}} or {{\"is_negative\": false}}.",
            emotion.text
        );
        let user = format!(
            "Emotion: {}\nDialogue:\n{}",
            emotion.text,
            render_transcript(context)
        );
        let messages = [ChatMessage::system(system), ChatMessage::user(user)];
        #[derive(Deserialize)]
        struct Verdict {
            is_negative: bool,
        }
        match self.ask(&messages).await {
            Ok(raw) => match extract_final_json::<Verdict>(&raw) {
                Some(v) => v.is_negative,
                None => {
                    tracing::warn!(emotion = %emotion.text, "unparseable valence verdict; assuming negative");
                    true
                }
            },
            Err(e) => {
                tracing::warn!(emotion = %emotion.text, error = %e, "valence lookup failed; assuming negative");
                true
            }
        }
    }

    /// Screens one user turn for self-harm or suicide risk.
    pub async fn safety_screen(&self, user_turn: &Turn, history: &[Turn]) -> SafetyFlag {
        self.safety_screen_detailed(user_turn, history).await.0
    }

    /// Like [`safety_screen`](Self::safety_screen), also returning the alert
    /// raised when the backend could not be consulted.
    pub async fn safety_screen_detailed(
        &self,
        user_turn: &Turn,
        _history: &[Turn],
    ) -> (SafetyFlag, Option<OperationalAlert>) {
        if user_turn.role != Role::User {
            return (SafetyFlag::clear(), None);
        }
        let content = user_turn.content.as_str();
        let Some(hit) = self.lexicon.find(content) else {
            return (SafetyFlag::clear(), None);
        };

        let messages = [
            ChatMessage::system(safety::SAFETY_PROMPT),
            ChatMessage::user(format!("Message: {content}")),
        ];
        let raw = match self.ask(&messages).await {
            Ok(raw) => raw,
            Err(e) => {
                let alert = OperationalAlert {
                    source: "safety_screen",
                    message: format!(
                        "safety model unavailable for turn {} (lexicon hit {:?}): {e}",
                        user_turn.index, hit
                    ),
                };
                self.raise(alert.clone());
                return (SafetyFlag::clear(), Some(alert));
            }
        };
        match extract_final_json::<safety::RawVerdict>(&raw) {
            Some(v) => (v.into_flag(content, hit), None),
            None => {
                let alert = OperationalAlert {
                    source: "safety_screen",
                    message: format!(
                        "unparseable safety verdict for turn {}: {raw:?}",
                        user_turn.index
                    ),
                };
                self.raise(alert.clone());
                (SafetyFlag::clear(), Some(alert))
            }
        }
    }
}

/// Catalog ids picked during the Label visit that ends the history.
fn picks_in_current_label_visit(history: &[Turn], catalog: &EmotionCatalog) -> Vec<String> {
    let start = history
        .iter()
        .rposition(|t| t.phase != Phase::Label)
        .map(|i| i + 1)
        .unwrap_or(0);
    let mut picks: Vec<String> = Vec::new();
    for turn in &history[start..] {
        if turn.role != Role::User {
            continue;
        }
        for id in turn.picked_emotion_ids() {
            if catalog.get(id).is_some() && !picks.contains(id) {
                picks.push(id.clone());
            }
        }
    }
    picks
}

/// Dialogue rendered for analyzer prompts, one line per turn.
pub fn render_transcript(history: &[Turn]) -> String {
    let mut out = String::new();
    for t in history {
        let speaker = match t.role {
            Role::System => "CHACHA",
            Role::User => "User",
        };
        let picks = t.picked_emotion_ids();
        let mut line = t.content.trim().replace('\n', " ");
        if !picks.is_empty() {
            let tag = format!("[picked emotions: {}]", picks.join(", "));
            line = if line.is_empty() { tag } else { format!("{tag} {line}") };
        }
        out.push_str(speaker);
        out.push_str(": ");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

struct PhaseSpec {
    task: &'static str,
    schema: &'static str,
}

fn phase_spec(phase: Phase) -> Option<PhaseSpec> {
    Some(match phase {
        Phase::Explore => PhaseSpec {
            task: "Decide whether the user has shared a key event: a specific incident that \
                   actually happened to them. Hobbies, preferences, and traits are not events.",
            schema: r#"{"key_event_shared": bool, "key_event_description": string or null}"#,
        },
        Phase::Label => PhaseSpec {
            task: "List the emotions the user expressed about their key event, including any \
                   picked from the emotion list. For each, decide whether CHACHA has already \
                   acknowledged it by restating it or empathizing with it, and whether it is \
                   negative for the user in this context (null if unclear). Also decide \
                   whether the user said they cannot describe their feelings or described them \
                   only vaguely, such as good or bad.",
            schema: r#"{"emotions": [{"name": string, "acknowledged": bool, "is_negative": bool or null}], "user_struggling_to_describe": bool}"#,
        },
        Phase::Find => PhaseSpec {
            task: "Decide whether other people were involved in the key event and whether the \
                   user has talked about how they would feel. List actionable solutions the \
                   user came up with. Mark user_declined if the user refused to think of a \
                   solution and accepted the emotion instead. solutions_explored is true once \
                   the user has settled on a solution or declined.",
            schema: r#"{"others_involved": bool, "others_feelings_discussed": bool, "solutions": [string], "user_declined": bool, "solutions_explored": bool}"#,
        },
        Phase::Record => PhaseSpec {
            task: "Decide whether CHACHA has asked if the user keeps a diary, has explained \
                   the benefits of recording positive moments, and has offered a sample diary \
                   entry summarizing the user's event and emotions.",
            schema: r#"{"keeps_diary_asked": bool, "benefits_explained": bool, "sample_diary_offered": bool}"#,
        },
        Phase::Share => PhaseSpec {
            task: "Decide whether the user has already shared the event and emotions with their \
                   parents (null if not yet discussed), whether CHACHA has encouraged sharing \
                   or praised it, whether the user wants to tell another story, and whether \
                   the user has nothing more to share and said goodbye.",
            schema: r#"{"already_shared_with_parents": bool or null, "sharing_encouraged_or_praised": bool, "new_event_requested": bool, "user_done": bool}"#,
        },
        Phase::Help => return None,
    })
}

fn analyzer_system_prompt(spec: PhaseSpec, examples: &[FewShotExample]) -> String {
    let mut s = String::new();
    s.push_str(
        "You analyze a conversation between CHACHA, a chatbot that talks like a peer child, \
         and a child user.\n",
    );
    s.push_str(spec.task);
    s.push_str(
        "\nThink step by step: quote the relevant parts of the dialogue and reason about each \
         field. Then, on the final line, output one JSON object with exactly these fields and \
         nothing else on that line:\n",
    );
    s.push_str(spec.schema);
    s.push('\n');
    if !examples.is_empty() {
        s.push_str("\nExamples:\n");
        for ex in examples {
            s.push_str("\nDialogue:\n");
            s.push_str(ex.history_excerpt.trim());
            s.push_str("\nFinal line:\n");
            s.push_str(&ex.expected_summary.to_string());
            s.push('\n');
        }
    }
    s
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawExplore {
    key_event_shared: bool,
    #[serde(default)]
    key_event_description: Option<String>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawLabelEmotion {
    name: String,
    #[serde(default)]
    acknowledged: bool,
    #[serde(default)]
    is_negative: Option<bool>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawLabel {
    emotions: Vec<RawLabelEmotion>,
    user_struggling_to_describe: bool,
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawFind {
    others_involved: bool,
    others_feelings_discussed: bool,
    #[serde(default)]
    solutions: Vec<String>,
    #[serde(default)]
    user_declined: bool,
    solutions_explored: bool,
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawRecord {
    keeps_diary_asked: bool,
    benefits_explained: bool,
    sample_diary_offered: bool,
    #[serde(default)]
    diary_discussed: Option<bool>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct RawShare {
    #[serde(default)]
    already_shared_with_parents: Option<bool>,
    sharing_encouraged_or_praised: bool,
    new_event_requested: bool,
    user_done: bool,
}

pub(crate) enum RawPayload {
    Explore(RawExplore),
    Label(RawLabel),
    Find(RawFind),
    Record(RawRecord),
    Share(RawShare),
}

pub(crate) fn parse_payload(phase: Phase, raw: &str) -> Option<RawPayload> {
    Some(match phase {
        Phase::Explore => RawPayload::Explore(extract_final_json(raw)?),
        Phase::Label => RawPayload::Label(extract_final_json(raw)?),
        Phase::Find => RawPayload::Find(extract_final_json(raw)?),
        Phase::Record => RawPayload::Record(extract_final_json(raw)?),
        Phase::Share => RawPayload::Share(extract_final_json(raw)?),
        Phase::Help => return None,
    })
}
