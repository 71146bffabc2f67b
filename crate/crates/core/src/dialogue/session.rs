use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, MutexGuard};

use super::Phase;
use crate::analyzers::PhaseSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachments {
    #[serde(default)]
    pub picker_shown: bool,
    #[serde(default)]
    pub picked_emotion_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub role: Role,
    pub content: String,
    /// Phase in effect when the turn was emitted.
    pub phase: Phase,
    pub attachments: Option<Attachments>,
    pub timestamp: DateTime<Utc>,
}

impl Turn {
    pub fn picked_emotion_ids(&self) -> &[String] {
        self.attachments
            .as_ref()
            .map(|a| a.picked_emotion_ids.as_slice())
            .unwrap_or(&[])
    }

    pub fn picker_shown(&self) -> bool {
        self.attachments.as_ref().is_some_and(|a| a.picker_shown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Ended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_name: String,
    pub user_age: u32,
    pub locale: String,
    pub phase: Phase,
    pub turns: Vec<Turn>,
    /// Most recent summary per phase.
    pub summaries: BTreeMap<Phase, PhaseSummary>,
    pub status: SessionStatus,
    pub created_at: DateTime<Utc>,
    /// Phase the session was in before entering the current one.
    pub previous_phase: Option<Phase>,
    /// Index of the first turn emitted in the current phase visit.
    pub phase_entered_at: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("session invariant violated: {0}")]
pub struct InvariantViolation(pub String);

impl Session {
    /// An empty active session in Explore.
    pub fn new(
        session_id: impl Into<String>,
        user_name: impl Into<String>,
        user_age: u32,
        locale: impl Into<String>,
        created_at: DateTime<Utc>,
    ) -> Self {
        Session {
            session_id: session_id.into(),
            user_name: user_name.into(),
            user_age,
            locale: locale.into(),
            phase: Phase::Explore,
            turns: Vec::new(),
            summaries: BTreeMap::new(),
            status: SessionStatus::Active,
            created_at,
            previous_phase: None,
            phase_entered_at: 0,
        }
    }

    /// Appends a turn with the next index in the current phase.
    pub fn push_turn(
        &mut self,
        role: Role,
        content: impl Into<String>,
        attachments: Option<Attachments>,
        timestamp: DateTime<Utc>,
    ) -> &Turn {
        let index = self.turns.len();
        self.turns.push(Turn {
            index,
            role,
            content: content.into(),
            phase: self.phase,
            attachments,
            timestamp,
        });
        &self.turns[index]
    }

    /// Switches phase; the next emitted turn starts the new visit.
    pub fn enter_phase(&mut self, phase: Phase) {
        if phase != self.phase {
            self.previous_phase = Some(self.phase);
            self.phase = phase;
            self.phase_entered_at = self.turns.len();
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == SessionStatus::Active
    }

    /// Turns emitted since the session last entered its current phase.
    pub fn current_visit(&self) -> &[Turn] {
        &self.turns[self.phase_entered_at.min(self.turns.len())..]
    }

    pub fn user_turns_in_visit(&self) -> usize {
        self.current_visit()
            .iter()
            .filter(|t| t.role == Role::User)
            .count()
    }

    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let fail = |m: String| Err(InvariantViolation(m));
        if self.user_age < 1 {
            return fail(format!("user_age {} < 1", self.user_age));
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.index != i {
                return fail(format!("turn {i} carries index {}", t.index));
            }
            let expected = if i % 2 == 0 { Role::System } else { Role::User };
            if t.role != expected {
                return fail(format!("turn {i} has role {:?}, expected {expected:?}", t.role));
            }
            if t.content.trim().is_empty() && t.picked_emotion_ids().is_empty() {
                return fail(format!("turn {i} is empty"));
            }
            if t.picker_shown() && (t.role != Role::System || t.phase != Phase::Label) {
                return fail(format!("turn {i} shows the picker outside a Label system turn"));
            }
            if !t.picked_emotion_ids().is_empty() && t.role != Role::User {
                return fail(format!("turn {i} carries picks on a system turn"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("session is busy with another message")]
pub struct SessionBusy;

/// Owns one session and enforces that at most one message is processed at a
/// time. A second caller gets [`SessionBusy`] instead of waiting.
#[derive(Debug)]
pub struct SessionCell {
    inner: Mutex<Session>,
}

impl SessionCell {
    pub fn new(session: Session) -> Self {
        Self {
            inner: Mutex::new(session),
        }
    }

    pub fn try_acquire(&self) -> Result<MutexGuard<'_, Session>, SessionBusy> {
        self.inner.try_lock().map_err(|_| SessionBusy)
    }

    /// Waits for any in-flight message to finish.
    pub async fn acquire(&self) -> MutexGuard<'_, Session> {
        self.inner.lock().await
    }
}
