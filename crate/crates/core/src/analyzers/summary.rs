use serde::{Deserialize, Serialize};

use crate::dialogue::Phase;

/// Marker stored in [`FindSummary::solutions`] when the child declined to
/// come up with a solution and the conversation moved on.
pub const REFUSAL_MARKER: &str = "user declined; accepts the emotion";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub key_event_shared: bool,
    pub key_event_description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEmotion {
    pub id_or_free_text: String,
    pub from_picker: bool,
    pub acknowledged: bool,
    pub is_negative: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub emotions: Vec<LabelEmotion>,
    pub user_struggling_to_describe: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindSummary {
    pub others_involved: bool,
    pub others_feelings_discussed: bool,
    pub solutions: Vec<String>,
    pub solutions_explored: bool,
}

impl FindSummary {
    pub fn user_declined(&self) -> bool {
        self.solutions.iter().any(|s| s == REFUSAL_MARKER)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub keeps_diary_asked: bool,
    pub benefits_explained: bool,
    pub sample_diary_offered: bool,
    pub diary_discussed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareSummary {
    pub already_shared_with_parents: Option<bool>,
    pub sharing_encouraged_or_praised: bool,
    pub new_event_requested: bool,
    pub user_done: bool,
}

/// Structured extraction of one phase's progress. Help has no summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum PhaseSummary {
    Explore(ExploreSummary),
    Label(LabelSummary),
    Find(FindSummary),
    Record(RecordSummary),
    Share(ShareSummary),
}

impl PhaseSummary {
    pub fn phase(&self) -> Phase {
        match self {
            PhaseSummary::Explore(_) => Phase::Explore,
            PhaseSummary::Label(_) => Phase::Label,
            PhaseSummary::Find(_) => Phase::Find,
            PhaseSummary::Record(_) => Phase::Record,
            PhaseSummary::Share(_) => Phase::Share,
        }
    }

    /// The "nothing achieved yet" summary used when a phase is first entered.
    pub fn initial(phase: Phase) -> Option<PhaseSummary> {
        Some(match phase {
            Phase::Explore => PhaseSummary::Explore(ExploreSummary::default()),
            Phase::Label => PhaseSummary::Label(LabelSummary::default()),
            Phase::Find => PhaseSummary::Find(FindSummary::default()),
            Phase::Record => PhaseSummary::Record(RecordSummary::default()),
            Phase::Share => PhaseSummary::Share(ShareSummary::default()),
            Phase::Help => return None,
        })
    }

    pub fn to_compact_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}
