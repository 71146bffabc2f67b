//! Transition tests: pure predicates over a phase summary.

use serde::{Deserialize, Serialize};

use super::Phase;
use crate::analyzers::PhaseSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Stay,
    Advance,
    /// Share goal met and the user is finished: the session ends.
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionDecision {
    pub outcome: Outcome,
    /// Present iff `outcome` is `Advance`.
    pub next_phase: Option<Phase>,
    pub reason: String,
}

impl TransitionDecision {
    fn stay(reason: impl Into<String>) -> Self {
        Self {
            outcome: Outcome::Stay,
            next_phase: None,
            reason: reason.into(),
        }
    }

    fn advance(next: Phase, reason: impl Into<String>) -> Self {
        Self {
            outcome: Outcome::Advance,
            next_phase: Some(next),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("contract violation: {0}")]
pub struct ContractError(pub String);

/// Decides whether the goal of `phase` is met according to `summary`.
///
/// Help never advances. A summary for a different phase is a caller bug.
pub fn evaluate_transition(
    phase: Phase,
    summary: &PhaseSummary,
) -> Result<TransitionDecision, ContractError> {
    if phase == Phase::Help {
        return Ok(TransitionDecision::stay("help phase has no automatic exit"));
    }
    if summary.phase() != phase {
        return Err(ContractError(format!(
            "summary for {} evaluated in phase {phase}",
            summary.phase()
        )));
    }

    let decision = match summary {
        PhaseSummary::Explore(s) => {
            if s.key_event_shared {
                TransitionDecision::advance(Phase::Label, "key event shared")
            } else {
                TransitionDecision::stay("no key event shared yet")
            }
        }
        PhaseSummary::Label(s) => {
            if s.emotions.is_empty() {
                TransitionDecision::stay("no emotion identified yet")
            } else if let Some(e) = s.emotions.iter().find(|e| !e.acknowledged) {
                TransitionDecision::stay(format!(
                    "emotion \"{}\" not acknowledged yet",
                    e.id_or_free_text
                ))
            } else if let Some(e) = s.emotions.iter().find(|e| e.is_negative) {
                TransitionDecision::advance(
                    Phase::Find,
                    format!(
                        "all emotions acknowledged; \"{}\" is negative",
                        e.id_or_free_text
                    ),
                )
            } else {
                TransitionDecision::advance(
                    Phase::Record,
                    "all emotions acknowledged; none negative",
                )
            }
        }
        PhaseSummary::Find(s) => {
            if s.solutions_explored {
                TransitionDecision::advance(Phase::Share, "solutions explored")
            } else {
                TransitionDecision::stay("no actionable solution explored yet")
            }
        }
        PhaseSummary::Record(s) => {
            if s.diary_discussed {
                TransitionDecision::advance(Phase::Share, "diary recording discussed")
            } else {
                TransitionDecision::stay("diary recording not fully discussed")
            }
        }
        PhaseSummary::Share(s) => {
            if s.new_event_requested {
                TransitionDecision::advance(Phase::Explore, "user has another event to share")
            } else if s.user_done {
                TransitionDecision {
                    outcome: Outcome::End,
                    next_phase: None,
                    reason: "user has nothing more to share".into(),
                }
            } else {
                TransitionDecision::stay("sharing conversation still open")
            }
        }
    };
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzers::*;

    fn emotion(id: &str, acknowledged: bool, is_negative: bool) -> LabelEmotion {
        LabelEmotion {
            id_or_free_text: id.into(),
            from_picker: false,
            acknowledged,
            is_negative,
        }
    }

    fn label(emotions: Vec<LabelEmotion>) -> PhaseSummary {
        PhaseSummary::Label(LabelSummary {
            emotions,
            user_struggling_to_describe: false,
        })
    }

    #[test]
    fn explore_without_event_stays() {
        let d = evaluate_transition(
            Phase::Explore,
            &PhaseSummary::Explore(ExploreSummary::default()),
        )
        .unwrap();
        assert_eq!(d.outcome, Outcome::Stay);
        assert_eq!(d.next_phase, None);
    }

    #[test]
    fn unacknowledged_regret_stays() {
        let d = evaluate_transition(Phase::Label, &label(vec![emotion("regret", false, true)]))
            .unwrap();
        assert_eq!(d.outcome, Outcome::Stay);
        assert!(d.reason.contains("regret"));
    }

    #[test]
    fn any_negative_goes_to_find() {
        let d = evaluate_transition(
            Phase::Label,
            &label(vec![emotion("joy", true, false), emotion("fear", true, true)]),
        )
        .unwrap();
        assert_eq!(d.outcome, Outcome::Advance);
        assert_eq!(d.next_phase, Some(Phase::Find));
    }

    #[test]
    fn all_positive_goes_to_record() {
        let d = evaluate_transition(Phase::Label, &label(vec![emotion("joy", true, false)]))
            .unwrap();
        assert_eq!(d.next_phase, Some(Phase::Record));
    }

    #[test]
    fn empty_label_stays() {
        let d = evaluate_transition(Phase::Label, &label(vec![])).unwrap();
        assert_eq!(d.outcome, Outcome::Stay);
    }

    #[test]
    fn record_discussed_goes_to_share() {
        let s = PhaseSummary::Record(RecordSummary {
            keeps_diary_asked: true,
            benefits_explained: true,
            sample_diary_offered: true,
            diary_discussed: true,
        });
        let d = evaluate_transition(Phase::Record, &s).unwrap();
        assert_eq!(d.next_phase, Some(Phase::Share));
    }

    #[test]
    fn share_loop_and_end() {
        let more = PhaseSummary::Share(ShareSummary {
            new_event_requested: true,
            ..Default::default()
        });
        assert_eq!(
            evaluate_transition(Phase::Share, &more).unwrap().next_phase,
            Some(Phase::Explore)
        );
        let done = PhaseSummary::Share(ShareSummary {
            user_done: true,
            ..Default::default()
        });
        let d = evaluate_transition(Phase::Share, &done).unwrap();
        assert_eq!(d.outcome, Outcome::End);
        assert_eq!(d.next_phase, None);
    }

    #[test]
    fn mismatched_summary_is_contract_error() {
        let err = evaluate_transition(Phase::Find, &label(vec![])).unwrap_err();
        assert!(err.0.contains("label"));
    }

    #[test]
    fn help_always_stays() {
        for p in Phase::GOAL_PHASES {
            let s = PhaseSummary::initial(p).unwrap();
            let d = evaluate_transition(Phase::Help, &s).unwrap();
            assert_eq!(d.outcome, Outcome::Stay);
        }
    }
}
