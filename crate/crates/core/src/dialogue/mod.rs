//! Session state, the phase machine, and the per-turn orchestration loop.

mod engine;
mod phase;
mod session;
mod transition;

pub use engine::{EndOutcome, Engine, EngineError, Generated, TraceEvent, TurnOutcome, AGE_RANGE, MAX_MESSAGE_CHARS, MAX_NAME_CHARS};
pub use phase::{is_allowed_edge, Phase};
pub use session::{
    Attachments, InvariantViolation, Role, Session, SessionBusy, SessionCell, SessionStatus, Turn,
};
pub use transition::{evaluate_transition, ContractError, Outcome, TransitionDecision};
