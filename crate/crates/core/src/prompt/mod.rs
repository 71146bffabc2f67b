//! Prompt composition for the generator tier.
//!
//! A bundle is the persona header, the phase's static instruction, a status
//! block templated from the summaries, and the shared speaking rules, in that
//! order, followed by the dialogue history. Composition is pure.

mod assets;
mod picker;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use assets::{AssetError, Directives, LocaleAssets, PromptAssets, Template, ALLOWED_PLACEHOLDERS};
pub use picker::{render_picker_directive, should_offer_picker, PickerEmotion, PickerError, PickerPayload};

use crate::analyzers::{LabelSummary, PhaseSummary};
use crate::dialogue::{Phase, Role, Session, Turn};
use crate::emotion::EmotionCatalog;
use crate::gateway::tokens::estimate_tokens;
use crate::gateway::{BackendConfig, ChatMessage, CompletionRequest, GenerationParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub phase: Phase,
    pub locale: String,
    pub persona_header: String,
    pub phase_static: String,
    pub dynamic_status: String,
    pub speaking_rules: String,
    pub recap: Option<String>,
    pub history: Vec<Turn>,
    pub offer_picker: bool,
    pub generation_params: GenerationParams,
}

impl PromptBundle {
    /// Instruction text: the non-empty blocks in fixed order.
    pub fn system_prompt(&self) -> String {
        let recap = self.recap.clone().unwrap_or_default();
        [
            self.persona_header.as_str(),
            self.phase_static.as_str(),
            self.dynamic_status.as_str(),
            recap.as_str(),
            self.speaking_rules.as_str(),
        ]
        .iter()
        .filter(|b| !b.trim().is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join("\n\n")
    }

    pub fn to_request(&self) -> CompletionRequest {
        let mut messages = Vec::with_capacity(self.history.len() + 1);
        messages.push(ChatMessage::system(self.system_prompt()));
        messages.extend(self.history.iter().map(turn_message));
        CompletionRequest {
            messages,
            params: Some(self.generation_params),
        }
    }

    /// Hex SHA-256 of the serialized bundle.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("bundle serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn turn_message(t: &Turn) -> ChatMessage {
    match t.role {
        Role::System => ChatMessage::assistant(t.content.clone()),
        Role::User => {
            let picks = t.picked_emotion_ids();
            if picks.is_empty() {
                ChatMessage::user(t.content.clone())
            } else if t.content.trim().is_empty() {
                ChatMessage::user(format!("[picked emotions: {}]", picks.join(", ")))
            } else {
                ChatMessage::user(format!("[picked emotions: {}] {}", picks.join(", "), t.content))
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("no prompt assets for locale {0:?}")]
    UnknownLocale(String),
    #[error("summary for {found} passed while composing {phase}")]
    SummaryMismatch { phase: Phase, found: Phase },
}

pub struct Composer {
    assets: PromptAssets,
    catalog: EmotionCatalog,
    params: GenerationParams,
    context_limit_tokens: usize,
    model_id: String,
}

/// User turns in an Explore visit after which the memorable-episode nudge
/// is added.
pub const EXPLORE_NUDGE_AFTER: usize = 5;

impl Composer {
    pub fn new(
        assets: PromptAssets,
        catalog: EmotionCatalog,
        params: GenerationParams,
        context_limit_tokens: usize,
        model_id: impl Into<String>,
    ) -> Self {
        Composer {
            assets,
            catalog,
            params,
            context_limit_tokens,
            model_id: model_id.into(),
        }
    }

    /// Uses the generator tier's sampling parameters and context limit.
    pub fn for_generator(assets: PromptAssets, catalog: EmotionCatalog, cfg: &BackendConfig) -> Self {
        Composer::new(
            assets,
            catalog,
            GenerationParams {
                temperature: cfg.temperature,
                max_output_tokens: cfg.max_output_tokens,
            },
            cfg.context_limit_tokens as usize,
            cfg.model_id.clone(),
        )
    }

    pub fn assets(&self) -> &PromptAssets {
        &self.assets
    }

    pub fn catalog(&self) -> &EmotionCatalog {
        &self.catalog
    }

    pub fn supports_locale(&self, locale: &str) -> bool {
        self.assets.locale(locale).is_some()
    }

    pub fn compose(
        &self,
        phase: Phase,
        session: &Session,
        current: Option<&PhaseSummary>,
        previous: Option<&PhaseSummary>,
    ) -> Result<PromptBundle, ComposeError> {
        let loc = &session.locale;
        let assets = self
            .assets
            .locale(loc)
            .ok_or_else(|| ComposeError::UnknownLocale(loc.clone()))?;
        if let Some(s) = current {
            if s.phase() != phase {
                return Err(ComposeError::SummaryMismatch {
                    phase,
                    found: s.phase(),
                });
            }
        }

        let offer_picker = match current {
            Some(PhaseSummary::Label(l)) if phase == Phase::Label => should_offer_picker(session, l),
            _ => false,
        };
        let dynamic_status = if phase == Phase::Help {
            String::new()
        } else {
            self.status_block(phase, session, current, previous, offer_picker, &assets.directives)
        };

        let mut values: BTreeMap<&str, String> = BTreeMap::new();
        values.insert("user_name", session.user_name.clone());
        values.insert("user_age", session.user_age.to_string());
        values.insert(
            "emotion_list",
            self.catalog
                .entries()
                .iter()
                .map(|e| e.label(loc))
                .collect::<Vec<_>>()
                .join(", "),
        );
        values.insert(
            "previous_summary",
            previous.map(PhaseSummary::to_compact_json).unwrap_or_default(),
        );
        values.insert("current_status", dynamic_status.clone());

        let mut bundle = PromptBundle {
            phase,
            locale: loc.clone(),
            persona_header: assets.persona.render(&values),
            phase_static: assets.instructions[&phase].render(&values),
            dynamic_status,
            speaking_rules: assets.rules.body.clone(),
            recap: None,
            history: session.turns.clone(),
            offer_picker,
            generation_params: self.params,
        };
        self.fit_context(&mut bundle, session, &assets.directives);
        Ok(bundle)
    }

    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text, &self.model_id)
    }

    /// Drops the oldest turns after the greeting until the request fits,
    /// replacing them with a recap.
    fn fit_context(&self, bundle: &mut PromptBundle, session: &Session, d: &Directives) {
        let budget = self
            .context_limit_tokens
            .saturating_sub(self.params.max_output_tokens as usize);
        let turn_cost: Vec<usize> = bundle
            .history
            .iter()
            .map(|t| self.estimate(&turn_message(t).content) + 4)
            .collect();
        let base = self.estimate(&bundle.system_prompt()) + 4;
        let total: usize = turn_cost.iter().sum();
        if base + total <= budget || bundle.history.len() <= 2 {
            return;
        }

        let summaries = serde_json::to_string(&session.summaries).expect("summaries serialize");
        let mut dropped = 0;
        let mut kept = total;
        let mut recap = String::new();
        while dropped + 2 < bundle.history.len() {
            dropped += 1;
            kept -= turn_cost[dropped];
            let gone = &bundle.history[1..=dropped];
            let mut phases: Vec<&str> = Vec::new();
            for t in gone {
                if !phases.contains(&t.phase.as_str()) {
                    phases.push(t.phase.as_str());
                }
            }
            let text = format!(
                "{} earlier turns were omitted (phases: {}). Summaries so far: {}",
                gone.len(),
                phases.join(", "),
                summaries
            );
            recap = d.recap.replace("{recap}", &text);
            if base + self.estimate(&recap) + kept <= budget {
                break;
            }
        }
        bundle.history.drain(1..=dropped);
        bundle.recap = Some(recap);
    }

    fn emotion_name(&self, id: &str, locale: &str) -> String {
        match self.catalog.get(id) {
            Some(e) => {
                let label = e.label(locale);
                if label.eq_ignore_ascii_case(id) {
                    id.to_string()
                } else {
                    format!("{id} ({label})")
                }
            }
            None => id.to_string(),
        }
    }

    fn status_block(
        &self,
        phase: Phase,
        session: &Session,
        current: Option<&PhaseSummary>,
        previous: Option<&PhaseSummary>,
        offer_picker: bool,
        d: &Directives,
    ) -> String {
        let mut lines: Vec<String> = Vec::new();
        if let Some(prev) = previous {
            lines.push(
                d.previous_summary
                    .replace("{phase}", prev.phase().as_str())
                    .replace("{summary}", &prev.to_compact_json()),
            );
        }

        let initial = PhaseSummary::initial(phase);
        match current.or(initial.as_ref()) {
            Some(PhaseSummary::Explore(s)) => {
                if !s.key_event_shared {
                    lines.push(d.explore_elicit.clone());
                    if session.user_turns_in_visit() >= EXPLORE_NUDGE_AFTER {
                        lines.push(d.explore_memorable.clone());
                    }
                }
            }
            Some(PhaseSummary::Label(s)) => {
                let event = session.summaries.get(&Phase::Explore).and_then(|s| match s {
                    PhaseSummary::Explore(e) => e.key_event_description.clone(),
                    _ => None,
                });
                if let Some(event) = event {
                    lines.push(d.label_key_event.replace("{event}", &event));
                }
                self.label_lines(s, &session.locale, offer_picker, d, &mut lines);
            }
            Some(PhaseSummary::Find(s)) => {
                if s.others_involved && !s.others_feelings_discussed {
                    lines.push(d.find_others.clone());
                }
                if !s.solutions_explored {
                    lines.push(d.find_solution.clone());
                }
            }
            Some(PhaseSummary::Record(s)) => {
                if !s.keeps_diary_asked {
                    lines.push(d.record_ask.clone());
                }
                if !s.benefits_explained {
                    lines.push(d.record_benefits.clone());
                }
                if !s.sample_diary_offered {
                    let positives = match session.summaries.get(&Phase::Label) {
                        Some(PhaseSummary::Label(l)) => l
                            .emotions
                            .iter()
                            .filter(|e| !e.is_negative)
                            .map(|e| self.emotion_name(&e.id_or_free_text, &session.locale))
                            .collect::<Vec<_>>()
                            .join(", "),
                        _ => String::new(),
                    };
                    lines.push(d.record_sample.replace("{emotions}", &positives));
                }
            }
            Some(PhaseSummary::Share(s)) => match s.already_shared_with_parents {
                None => lines.push(d.share_ask.clone()),
                Some(shared) => {
                    if !s.sharing_encouraged_or_praised {
                        lines.push(if shared {
                            d.share_praise.clone()
                        } else {
                            d.share_encourage.clone()
                        });
                    }
                    if !s.new_event_requested && !s.user_done {
                        lines.push(d.share_another.clone());
                    }
                }
            },
            None => {}
        }

        if lines.is_empty() {
            return String::new();
        }
        let mut out = d.status_header.clone();
        for l in lines {
            out.push_str("\n- ");
            out.push_str(&l);
        }
        out
    }

    fn label_lines(
        &self,
        s: &LabelSummary,
        locale: &str,
        offer_picker: bool,
        d: &Directives,
        lines: &mut Vec<String>,
    ) {
        if s.emotions.is_empty() && !s.user_struggling_to_describe {
            lines.push(d.label_open.clone());
        }
        for e in s.emotions.iter().filter(|e| !e.acknowledged) {
            let name = self.emotion_name(&e.id_or_free_text, locale);
            lines.push(d.label_empathize.replace("{emotion}", &name));
        }
        if offer_picker {
            lines.push(d.label_picker.clone());
        }
    }
}
