use std::fmt;

use serde::{Deserialize, Serialize};

/// Conversation phases. Every session starts in `Explore`; `Help` can be
/// entered from anywhere and is never left automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Label,
    Find,
    Record,
    Share,
    Help,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Explore,
        Phase::Label,
        Phase::Find,
        Phase::Record,
        Phase::Share,
        Phase::Help,
    ];

    /// The five goal-directed phases, i.e. everything except `Help`.
    pub const GOAL_PHASES: [Phase; 5] = [
        Phase::Explore,
        Phase::Label,
        Phase::Find,
        Phase::Record,
        Phase::Share,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Explore => "explore",
            Phase::Label => "label",
            Phase::Find => "find",
            Phase::Record => "record",
            Phase::Share => "share",
            Phase::Help => "help",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The phase graph. Staying in a phase is not an edge.
pub fn is_allowed_edge(from: Phase, to: Phase) -> bool {
    use Phase::*;
    matches!(
        (from, to),
        (Explore, Label)
            | (Label, Find)
            | (Label, Record)
            | (Find, Share)
            | (Record, Share)
            | (Share, Explore)
            | (Explore | Label | Find | Record | Share, Help)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_set() {
        let allowed: Vec<_> = Phase::ALL
            .iter()
            .flat_map(|&a| Phase::ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| is_allowed_edge(a, b))
            .collect();
        assert_eq!(allowed.len(), 11);
        assert!(!is_allowed_edge(Phase::Help, Phase::Explore));
        assert!(!is_allowed_edge(Phase::Explore, Phase::Find));
        assert!(!is_allowed_edge(Phase::Label, Phase::Label));
    }

    #[test]
    fn names_round_trip() {
        for p in Phase::ALL {
            assert_eq!(Phase::parse(p.as_str()), Some(p));
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
    }
}
