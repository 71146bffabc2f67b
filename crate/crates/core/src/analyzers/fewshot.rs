use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub history_excerpt: String,
    pub expected_summary: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum FewShotError {
    #[error("few-shot file for {phase}: {source}")]
    Parse {
        phase: Phase,
        #[source]
        source: serde_json::Error,
    },
    #[error("few-shot example {index} for {phase} does not match the summary schema")]
    Schema { phase: Phase, index: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Few-shot examples per analyzed phase.
#[derive(Debug, Clone, Default)]
pub struct FewShotStore {
    by_phase: HashMap<Phase, Vec<FewShotExample>>,
}

const BUNDLED: [(Phase, &str); 5] = [
    (Phase::Explore, include_str!("../../assets/fewshot/explore.json")),
    (Phase::Label, include_str!("../../assets/fewshot/label.json")),
    (Phase::Find, include_str!("../../assets/fewshot/find.json")),
    (Phase::Record, include_str!("../../assets/fewshot/record.json")),
    (Phase::Share, include_str!("../../assets/fewshot/share.json")),
];

impl FewShotStore {
    pub fn bundled() -> Self {
        let mut store = Self::default();
        for (phase, text) in BUNDLED {
            store.insert_json(phase, text).expect("bundled few-shot examples are valid");
        }
        store
    }

    /// Loads `<phase>.json` for each analyzed phase that exists in `dir`;
    /// phases without a file keep the bundled examples.
    pub fn from_dir(dir: &Path) -> Result<Self, FewShotError> {
        let mut store = Self::bundled();
        for phase in Phase::GOAL_PHASES {
            let path = dir.join(format!("{phase}.json"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|source| FewShotError::Io {
                path: path.display().to_string(),
                source,
            })?;
            store.insert_json(phase, &text)?;
        }
        Ok(store)
    }

    pub fn insert_json(&mut self, phase: Phase, text: &str) -> Result<(), FewShotError> {
        let examples: Vec<FewShotExample> =
            serde_json::from_str(text).map_err(|source| FewShotError::Parse { phase, source })?;
        for (index, ex) in examples.iter().enumerate() {
            if super::parse_payload(phase, &ex.expected_summary.to_string()).is_none() {
                return Err(FewShotError::Schema { phase, index });
            }
        }
        self.by_phase.insert(phase, examples);
        Ok(())
    }

    pub fn examples(&self, phase: Phase) -> &[FewShotExample] {
        self.by_phase.get(&phase).map(Vec::as_slice).unwrap_or(&[])
    }
}
