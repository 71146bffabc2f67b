//! Phase state-machine dialogue engine that guides a child through sharing a
//! personal event and the emotions attached to it.
//!
//! A session moves through Explore, Label, Find or Record, and Share, with a
//! Help phase as a safety backstop. After each user message the current
//! phase's analyzer extracts a structured summary from the dialogue, a pure
//! transition test decides whether the phase goal is met, and the prompt for
//! the next reply is assembled from static instructions plus directives for
//! whatever the summary still lacks.

pub mod analytics;
pub mod analyzers;
pub mod clock;
pub mod dialogue;
pub mod emotion;
pub mod gateway;
pub mod log;
pub mod prompt;
pub mod script;

pub use analyzers::{
    Analyzers, ExploreSummary, FindSummary, LabelEmotion, LabelSummary, PhaseSummary,
    RecordSummary, SafetyCategory, SafetyFlag, ShareSummary,
};
pub use clock::{Clock, IdSource, SequentialIds, SteppingClock, SystemClock, UuidIds};
pub use dialogue::{
    evaluate_transition, Attachments, Engine, EngineError, Outcome, Phase, Role, Session,
    SessionCell, SessionStatus, TraceEvent, TransitionDecision, Turn, TurnOutcome,
};
pub use emotion::{EmotionCatalog, EmotionEntry, Valence};
pub use gateway::{
    BackendConfig, CompletionRequest, CompletionResult, Gateway, ScriptedBackend, Tier, Usage,
};
pub use log::{LogRecord, LogStore};
pub use prompt::{Composer, PickerPayload, PromptBundle};
