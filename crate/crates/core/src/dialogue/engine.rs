//! Per-turn orchestration: safety screen, analysis, transition, composition,
//! generation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{evaluate_transition, Attachments, Outcome, Phase, Role, Session, SessionBusy, SessionCell, SessionStatus, TransitionDecision, Turn};
use crate::analyzers::{AnalyzerError, Analyzers, PhaseSummary, SafetyCategory, SafetyFlag};
use crate::clock::{Clock, IdSource};
use crate::gateway::{Gateway, GatewayError, Tier, Usage};
use crate::prompt::{render_picker_directive, ComposeError, Composer, PickerPayload, PromptBundle};

pub const MAX_NAME_CHARS: usize = 64;
pub const MAX_MESSAGE_CHARS: usize = 4000;
pub const AGE_RANGE: std::ops::RangeInclusive<i64> = 1..=150;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("session has ended")]
    Ended,
    #[error(transparent)]
    Busy(#[from] SessionBusy),
    #[error(transparent)]
    Upstream(#[from] GatewayError),
    #[error("generator returned an empty reply")]
    EmptyReply,
    #[error("{0}")]
    Analyzer(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Invariant(#[from] super::InvariantViolation),
}

impl From<AnalyzerError> for EngineError {
    fn from(e: AnalyzerError) -> Self {
        match e {
            AnalyzerError::Gateway(g) => EngineError::Upstream(g),
            AnalyzerError::Contract(m) => EngineError::Contract(m),
            e @ AnalyzerError::Unparseable { .. } => EngineError::Analyzer(e.to_string()),
        }
    }
}

impl From<ComposeError> for EngineError {
    fn from(e: ComposeError) -> Self {
        EngineError::Contract(e.to_string())
    }
}

impl From<super::ContractError> for EngineError {
    fn from(e: super::ContractError) -> Self {
        EngineError::Contract(e.0)
    }
}

/// One step of the per-turn pipeline, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    SafetyScreened { flagged: bool, category: SafetyCategory },
    Alert { source: String, message: String },
    Analyzed { phase: Phase, summary: PhaseSummary },
    TransitionEvaluated { phase: Phase, decision: TransitionDecision },
    PhaseChanged { from: Phase, to: Phase },
    Composed { phase: Phase, prompt_digest: String },
    Generated { model_id: String, attempts: usize },
    PickerShown,
}

/// A system turn together with what produced it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub turn: Turn,
    pub bundle: PromptBundle,
    pub prompt_digest: String,
    pub usage: Usage,
    pub picker: Option<PickerPayload>,
}

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub user_turn: Turn,
    pub system_turns: Vec<Turn>,
    pub phase_after: Phase,
    pub session_ended: bool,
    pub safety: SafetyFlag,
    pub decision: Option<TransitionDecision>,
    pub trace: Vec<TraceEvent>,
    pub bundle: PromptBundle,
    pub prompt_digest: String,
    pub usage: Usage,
    pub picker: Option<PickerPayload>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndOutcome {
    pub already_ended: bool,
}

pub struct Engine {
    gateway: Arc<Gateway>,
    analyzers: Arc<Analyzers>,
    composer: Arc<Composer>,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
    default_locale: String,
}

impl Engine {
    pub fn new(
        gateway: Arc<Gateway>,
        analyzers: Arc<Analyzers>,
        composer: Arc<Composer>,
        clock: Arc<dyn Clock>,
        ids: Arc<dyn IdSource>,
    ) -> Self {
        Engine {
            gateway,
            analyzers,
            composer,
            clock,
            ids,
            default_locale: "ko".into(),
        }
    }

    pub fn with_default_locale(mut self, locale: impl Into<String>) -> Self {
        self.default_locale = locale.into();
        self
    }

    pub fn composer(&self) -> &Composer {
        &self.composer
    }

    pub fn analyzers(&self) -> &Analyzers {
        &self.analyzers
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    /// Validates the user, opens a session in Explore, and generates the
    /// greeting.
    pub async fn create_session(
        &self,
        name: &str,
        age: i64,
        locale: Option<&str>,
    ) -> Result<(Session, Generated), EngineError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(EngineError::Validation("name must not be empty".into()));
        }
        if name.chars().count() > MAX_NAME_CHARS {
            return Err(EngineError::Validation(format!(
                "name must be at most {MAX_NAME_CHARS} characters"
            )));
        }
        if !AGE_RANGE.contains(&age) {
            return Err(EngineError::Validation(format!(
                "age must be between {} and {}",
                AGE_RANGE.start(),
                AGE_RANGE.end()
            )));
        }
        let locale = locale.unwrap_or(&self.default_locale);
        if !self.composer.supports_locale(locale) {
            return Err(EngineError::Validation(format!("unsupported locale {locale:?}")));
        }

        let mut session = Session::new(
            self.ids.next_id(),
            name,
            age as u32,
            locale,
            self.clock.now(),
        );
        let mut trace = Vec::new();
        let greeting = self.generate(&mut session, &mut trace).await?;
        session.check_invariants()?;
        Ok((session, greeting))
    }

    /// Runs one user message through the pipeline. `session` is only
    /// modified if the whole turn succeeds.
    pub async fn handle_user_message(
        &self,
        session: &mut Session,
        content: &str,
        picks: &[String],
    ) -> Result<TurnOutcome, EngineError> {
        if !session.is_active() {
            return Err(EngineError::Ended);
        }
        let picks = self.validate_picks(session.phase, picks)?;
        if content.trim().is_empty() && picks.is_empty() {
            return Err(EngineError::Validation("message must have text or picked emotions".into()));
        }
        if content.chars().count() > MAX_MESSAGE_CHARS {
            return Err(EngineError::Validation(format!(
                "message must be at most {MAX_MESSAGE_CHARS} characters"
            )));
        }

        let mut work = session.clone();
        let attachments = (!picks.is_empty()).then(|| Attachments {
            picker_shown: false,
            picked_emotion_ids: picks,
        });
        let now = self.clock.now();
        let user_turn = work.push_turn(Role::User, content, attachments, now).clone();
        let mut trace = Vec::new();

        let mut safety = SafetyFlag::clear();
        if work.phase != Phase::Help {
            let (flag, alert) = self
                .analyzers
                .safety_screen_detailed(&user_turn, &work.turns)
                .await;
            trace.push(TraceEvent::SafetyScreened {
                flagged: flag.flagged,
                category: flag.category,
            });
            if let Some(a) = alert {
                trace.push(TraceEvent::Alert {
                    source: a.source.to_string(),
                    message: a.message,
                });
            }
            safety = flag;
        }

        let mut decision = None;
        let mut ended = false;
        if safety.flagged {
            let from = work.phase;
            work.enter_phase(Phase::Help);
            trace.push(TraceEvent::PhaseChanged { from, to: Phase::Help });
        } else if work.phase != Phase::Help {
            let phase = work.phase;
            let summary = self
                .analyzers
                .analyze(phase, &work.turns, self.composer.catalog())
                .await?;
            trace.push(TraceEvent::Analyzed {
                phase,
                summary: summary.clone(),
            });
            let d = evaluate_transition(phase, &summary)?;
            work.summaries.insert(phase, summary);
            trace.push(TraceEvent::TransitionEvaluated {
                phase,
                decision: d.clone(),
            });
            match (d.outcome, d.next_phase) {
                (Outcome::Advance, Some(next)) => {
                    if phase == Phase::Share && next == Phase::Explore {
                        for p in [Phase::Explore, Phase::Label, Phase::Find, Phase::Record] {
                            work.summaries.remove(&p);
                        }
                    }
                    work.enter_phase(next);
                    trace.push(TraceEvent::PhaseChanged { from: phase, to: next });
                }
                (Outcome::Advance, None) => {
                    return Err(EngineError::Contract("advance without a next phase".into()))
                }
                (Outcome::End, _) => ended = true,
                (Outcome::Stay, _) => {}
            }
            decision = Some(d);
        }

        let generated = self.generate(&mut work, &mut trace).await?;
        if ended {
            work.status = SessionStatus::Ended;
        }
        work.check_invariants()?;
        *session = work;

        Ok(TurnOutcome {
            user_turn,
            system_turns: vec![generated.turn],
            phase_after: session.phase,
            session_ended: ended,
            safety,
            decision,
            trace,
            bundle: generated.bundle,
            prompt_digest: generated.prompt_digest,
            usage: generated.usage,
            picker: generated.picker,
        })
    }

    /// Like [`handle_user_message`](Self::handle_user_message), failing fast
    /// with [`EngineError::Busy`] if another message holds the session.
    pub async fn handle_in_cell(
        &self,
        cell: &SessionCell,
        content: &str,
        picks: &[String],
    ) -> Result<TurnOutcome, EngineError> {
        let mut guard = cell.try_acquire()?;
        self.handle_user_message(&mut guard, content, picks).await
    }

    pub fn end_session(&self, session: &mut Session) -> EndOutcome {
        let already_ended = !session.is_active();
        session.status = SessionStatus::Ended;
        EndOutcome { already_ended }
    }

    fn validate_picks(&self, phase: Phase, picks: &[String]) -> Result<Vec<String>, EngineError> {
        if picks.is_empty() {
            return Ok(Vec::new());
        }
        if phase != Phase::Label {
            return Err(EngineError::Validation(format!(
                "emotions can only be picked in the label phase, not {phase}"
            )));
        }
        let mut out: Vec<String> = Vec::with_capacity(picks.len());
        for id in picks {
            if self.composer.catalog().get(id).is_none() {
                return Err(EngineError::Validation(format!("unknown emotion id {id:?}")));
            }
            if !out.contains(id) {
                out.push(id.clone());
            }
        }
        Ok(out)
    }

    /// Composes for the session's current phase and appends the reply.
    async fn generate(
        &self,
        work: &mut Session,
        trace: &mut Vec<TraceEvent>,
    ) -> Result<Generated, EngineError> {
        let phase = work.phase;
        let initial = PhaseSummary::initial(phase);
        let current = work.summaries.get(&phase).or(initial.as_ref());
        let previous = work.previous_phase.and_then(|p| work.summaries.get(&p));
        let bundle = self.composer.compose(phase, work, current, previous)?;
        let prompt_digest = bundle.digest();
        trace.push(TraceEvent::Composed {
            phase,
            prompt_digest: prompt_digest.clone(),
        });

        let completion = self
            .gateway
            .complete(Tier::Generator, &bundle.to_request())
            .await?;
        trace.push(TraceEvent::Generated {
            model_id: completion.model_id.clone(),
            attempts: completion.attempts.len(),
        });
        let content = completion.result.content.trim().to_string();
        if content.is_empty() {
            return Err(EngineError::EmptyReply);
        }

        let picker = if bundle.offer_picker {
            let p = render_picker_directive(self.composer.catalog(), &work.locale, phase)
                .map_err(|e| EngineError::Contract(e.to_string()))?;
            trace.push(TraceEvent::PickerShown);
            Some(p)
        } else {
            None
        };
        let attachments = picker.as_ref().map(|_| Attachments {
            picker_shown: true,
            picked_emotion_ids: Vec::new(),
        });
        let now = self.clock.now();
        let turn = work.push_turn(Role::System, content, attachments, now).clone();
        Ok(Generated {
            turn,
            bundle,
            prompt_digest,
            usage: completion.result.usage,
            picker,
        })
    }
}
