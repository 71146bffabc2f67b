use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyCategory {
    SelfHarm,
    Suicide,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyFlag {
    pub flagged: bool,
    pub category: SafetyCategory,
    /// Verbatim substring of the screened turn; empty when not flagged.
    pub evidence: String,
}

impl SafetyFlag {
    pub fn clear() -> Self {
        Self {
            flagged: false,
            category: SafetyCategory::None,
            evidence: String::new(),
        }
    }
}

pub(crate) const SAFETY_PROMPT: &str = "You monitor messages from a child talking with a chatbot. \
Decide whether the message indicates that the child may hurt themselves (self_harm) or is \
thinking about suicide (suicide). Jokes and unrelated uses of words like \"die\" in games are \
not indications. Think briefly, then on the final line output one JSON object: \
{\"flagged\": bool, \"category\": \"self_harm\" | \"suicide\" | \"none\", \"evidence\": \
the exact words from the message that show the risk, or \"\"}";

#[derive(Debug, Deserialize)]
pub(crate) struct RawVerdict {
    flagged: bool,
    #[serde(default)]
    category: Option<SafetyCategory>,
    #[serde(default)]
    evidence: Option<String>,
}

impl RawVerdict {
    /// Normalizes the verdict so that `flagged` and `category` agree and the
    /// evidence is a substring of `content`.
    pub(crate) fn into_flag(self, content: &str, lexicon_hit: &str) -> SafetyFlag {
        let category = match (self.flagged, self.category) {
            (false, _) => return SafetyFlag::clear(),
            (true, Some(SafetyCategory::None) | None) => SafetyCategory::SelfHarm,
            (true, Some(c)) => c,
        };
        let evidence = self
            .evidence
            .filter(|e| !e.is_empty() && content.contains(e.as_str()))
            .unwrap_or_else(|| lexicon_hit.to_string());
        SafetyFlag {
            flagged: true,
            category,
            evidence,
        }
    }
}

/// Case-insensitive phrase prefilter; turns with no hit skip the model.
#[derive(Debug, Clone)]
pub struct SafetyLexicon {
    phrases: Vec<String>,
    pattern: Option<Regex>,
}

impl SafetyLexicon {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.as_ref().trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        let pattern = (!phrases.is_empty()).then(|| {
            let alternation = phrases
                .iter()
                .map(|p| regex::escape(p))
                .collect::<Vec<_>>()
                .join("|");
            RegexBuilder::new(&alternation)
                .case_insensitive(true)
                .build()
                .expect("escaped phrases form a valid regex")
        });
        Self { phrases, pattern }
    }

    /// One phrase per line; blank lines are ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines())
    }

    pub fn bundled() -> Self {
        Self::parse(include_str!("../../assets/safety_lexicon.txt"))
    }

    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    /// The matched slice of `text`, if any phrase occurs in it.
    pub fn find<'a>(&self, text: &'a str) -> Option<&'a str> {
        self.pattern.as_ref()?.find(text).map(|m| m.as_str())
    }
}
