//! The Label-phase emotion picker payload and the rule for when to offer it.

use serde::{Deserialize, Serialize};

use crate::analyzers::LabelSummary;
use crate::dialogue::{Phase, Role, Session};
use crate::emotion::EmotionCatalog;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickerEmotion {
    pub id: String,
    pub label: String,
    pub emoji: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickerPayload {
    pub picker_shown: bool,
    pub multi_select: bool,
    pub emotions: Vec<PickerEmotion>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PickerError {
    #[error("the emotion picker is only offered in the label phase, not {0}")]
    WrongPhase(Phase),
    #[error("the emotion catalog is empty")]
    EmptyCatalog,
}

/// Every catalog entry in catalog order, labelled for `locale`.
pub fn render_picker_directive(
    catalog: &EmotionCatalog,
    locale: &str,
    phase: Phase,
) -> Result<PickerPayload, PickerError> {
    if phase != Phase::Label {
        return Err(PickerError::WrongPhase(phase));
    }
    if catalog.is_empty() {
        return Err(PickerError::EmptyCatalog);
    }
    Ok(PickerPayload {
        picker_shown: true,
        multi_select: true,
        emotions: catalog
            .entries()
            .iter()
            .map(|e| PickerEmotion {
                id: e.id.clone(),
                label: e.label(locale).to_string(),
                emoji: e.emoji.clone(),
            })
            .collect(),
    })
}

/// True when the next Label reply should carry the picker: the user is
/// struggling and the picker has not been shown this visit, or it was shown
/// and every reply since came back without picks.
pub fn should_offer_picker(session: &Session, summary: &LabelSummary) -> bool {
    if session.phase != Phase::Label || !summary.user_struggling_to_describe {
        return false;
    }
    let visit = session.current_visit();
    match visit
        .iter()
        .rposition(|t| t.role == Role::System && t.picker_shown())
    {
        None => true,
        Some(i) => {
            let replies = &visit[i + 1..];
            replies.iter().any(|t| t.role == Role::User)
                && replies
                    .iter()
                    .all(|t| t.role != Role::User || t.picked_emotion_ids().is_empty())
        }
    }
}
