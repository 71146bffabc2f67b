//! Locale-keyed instruction assets: persona header, per-phase static
//! instructions, speaking rules, and status directive templates.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::dialogue::Phase;

/// Placeholders an instruction template may reference.
pub const ALLOWED_PLACEHOLDERS: [&str; 5] = [
    "user_name",
    "user_age",
    "emotion_list",
    "previous_summary",
    "current_status",
];

#[derive(Debug, thiserror::Error)]
pub enum AssetError {
    #[error("missing prompt asset {file} for locale {locale}")]
    Missing { locale: String, file: String },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
    #[error("no prompt assets configured")]
    Empty,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(file: &str, message: impl Into<String>) -> AssetError {
    AssetError::Invalid {
        file: file.to_string(),
        message: message.into(),
    }
}

/// A text asset with its declared front matter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub phase: Option<Phase>,
    pub locale: String,
    pub placeholders: Vec<String>,
    pub extra: BTreeMap<String, String>,
    pub body: String,
}

impl Template {
    /// Parses `---`-delimited `key: value` front matter followed by the body.
    pub fn parse(file: &str, text: &str) -> Result<Self, AssetError> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let rest = text
            .strip_prefix("---\n")
            .ok_or_else(|| invalid(file, "missing front matter"))?;
        let end = rest
            .find("\n---\n")
            .ok_or_else(|| invalid(file, "unterminated front matter"))?;
        let (header, body) = (&rest[..end], &rest[end + 5..]);

        let mut fields = BTreeMap::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| invalid(file, format!("bad front matter line {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }

        let locale = fields
            .remove("locale")
            .filter(|l| !l.is_empty())
            .ok_or_else(|| invalid(file, "front matter lacks locale"))?;
        let phase = match fields.remove("phase") {
            Some(p) => Some(
                Phase::parse(&p).ok_or_else(|| invalid(file, format!("unknown phase {p:?}")))?,
            ),
            None => None,
        };
        let declared = fields
            .remove("placeholders")
            .ok_or_else(|| invalid(file, "front matter lacks placeholders"))?;
        let placeholders: Vec<String> = declared
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| invalid(file, "placeholders must be a [list]"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();

        for p in &placeholders {
            if !ALLOWED_PLACEHOLDERS.contains(&p.as_str()) {
                return Err(invalid(file, format!("placeholder {p:?} is not allowed")));
            }
        }
        for used in placeholders_in(body) {
            if !placeholders.iter().any(|p| p == used) {
                return Err(invalid(file, format!("undeclared placeholder {{{{{used}}}}}")));
            }
        }

        Ok(Template {
            phase,
            locale,
            placeholders,
            extra: fields,
            body: body.trim_end().to_string(),
        })
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> String {
        let mut out = self.body.clone();
        for p in &self.placeholders {
            let value = values.get(p.as_str()).map(String::as_str).unwrap_or("");
            out = out.replace(&format!("{{{{{p}}}}}"), value);
        }
        out
    }
}

fn placeholders_in(body: &str) -> Vec<&str> {
    let mut found = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                found.push(after[..end].trim());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    found
}

/// Sentences the status block is assembled from. `{name}` markers are filled
/// from the summaries.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Directives {
    pub status_header: String,
    pub previous_summary: String,
    pub recap: String,
    pub explore_elicit: String,
    pub explore_memorable: String,
    pub label_key_event: String,
    pub label_open: String,
    pub label_empathize: String,
    pub label_picker: String,
    pub find_others: String,
    pub find_solution: String,
    pub record_ask: String,
    pub record_benefits: String,
    pub record_sample: String,
    pub share_ask: String,
    pub share_encourage: String,
    pub share_praise: String,
    pub share_another: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocaleAssets {
    pub persona: Template,
    pub instructions: BTreeMap<Phase, Template>,
    pub rules: Template,
    pub one_question_rule: String,
    pub directives: Directives,
}

/// All locales' assets, validated and immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptAssets {
    locales: BTreeMap<String, LocaleAssets>,
}

macro_rules! bundled_locale {
    ($loc:literal) => {
        [
            ("persona.txt", include_str!(concat!("../../assets/prompts/", $loc, "/persona.txt"))),
            ("explore.txt", include_str!(concat!("../../assets/prompts/", $loc, "/explore.txt"))),
            ("label.txt", include_str!(concat!("../../assets/prompts/", $loc, "/label.txt"))),
            ("find.txt", include_str!(concat!("../../assets/prompts/", $loc, "/find.txt"))),
            ("record.txt", include_str!(concat!("../../assets/prompts/", $loc, "/record.txt"))),
            ("share.txt", include_str!(concat!("../../assets/prompts/", $loc, "/share.txt"))),
            ("help.txt", include_str!(concat!("../../assets/prompts/", $loc, "/help.txt"))),
            ("rules.txt", include_str!(concat!("../../assets/prompts/", $loc, "/rules.txt"))),
            ("directives.json", include_str!(concat!("../../assets/prompts/", $loc, "/directives.json"))),
        ]
    };
}

const FILES: [&str; 9] = [
    "persona.txt",
    "explore.txt",
    "label.txt",
    "find.txt",
    "record.txt",
    "share.txt",
    "help.txt",
    "rules.txt",
    "directives.json",
];

impl PromptAssets {
    /// The assets shipped with the crate (`ko` and `en`).
    pub fn bundled() -> Self {
        let mut locales = BTreeMap::new();
        for (loc, files) in [("ko", bundled_locale!("ko")), ("en", bundled_locale!("en"))] {
            let map: BTreeMap<&str, &str> = files.into_iter().collect();
            let assets = LocaleAssets::from_files(loc, |f| map.get(f).map(|s| s.to_string()))
                .expect("bundled prompt assets are valid");
            locales.insert(loc.to_string(), assets);
        }
        PromptAssets { locales }
    }

    /// Loads every `<dir>/<locale>/` subdirectory.
    pub fn from_dir(dir: &Path) -> Result<Self, AssetError> {
        let io = |source| AssetError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut locales = BTreeMap::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<_, _>>()
            .map_err(io)?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            if !entry.path().is_dir() {
                continue;
            }
            let loc = entry.file_name().to_string_lossy().to_string();
            let base = entry.path();
            let assets =
                LocaleAssets::from_files(&loc, |f| std::fs::read_to_string(base.join(f)).ok())?;
            locales.insert(loc, assets);
        }
        if locales.is_empty() {
            return Err(AssetError::Empty);
        }
        Ok(PromptAssets { locales })
    }

    pub fn locale(&self, locale: &str) -> Option<&LocaleAssets> {
        self.locales.get(locale)
    }

    pub fn locales(&self) -> impl Iterator<Item = &str> {
        self.locales.keys().map(String::as_str)
    }

    /// Fails unless every listed locale is present.
    pub fn require(&self, locales: &[String]) -> Result<(), AssetError> {
        for loc in locales {
            if !self.locales.contains_key(loc) {
                return Err(AssetError::Missing {
                    locale: loc.clone(),
                    file: "persona.txt".into(),
                });
            }
        }
        Ok(())
    }
}

impl LocaleAssets {
    fn from_files(
        locale: &str,
        read: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, AssetError> {
        let mut texts = BTreeMap::new();
        for f in FILES {
            let text = read(f).ok_or_else(|| AssetError::Missing {
                locale: locale.to_string(),
                file: f.to_string(),
            })?;
            texts.insert(f, text);
        }
        let load = |f: &str, phase: Option<Phase>| -> Result<Template, AssetError> {
            let name = format!("{locale}/{f}");
            let t = Template::parse(&name, &texts[f])?;
            if t.locale != locale {
                return Err(invalid(&name, format!("declares locale {:?}", t.locale)));
            }
            if t.phase != phase {
                return Err(invalid(&name, format!("declares phase {:?}, expected {phase:?}", t.phase)));
            }
            Ok(t)
        };

        let persona = load("persona.txt", None)?;
        let mut instructions = BTreeMap::new();
        for phase in Phase::ALL {
            let f = format!("{}.txt", phase.as_str());
            instructions.insert(phase, load(&f, Some(phase))?);
        }
        let rules = load("rules.txt", None)?;
        let rules_name = format!("{locale}/rules.txt");
        let one_question_rule = rules
            .extra
            .get("one_question_rule")
            .cloned()
            .filter(|r| !r.is_empty())
            .ok_or_else(|| invalid(&rules_name, "front matter lacks one_question_rule"))?;
        if !rules.body.contains(&one_question_rule) {
            return Err(invalid(&rules_name, "body does not contain the one-question rule"));
        }
        if !rules.placeholders.is_empty() {
            return Err(invalid(&rules_name, "speaking rules must not be templated"));
        }
        let directives: Directives = serde_json::from_str(&texts["directives.json"])
            .map_err(|e| invalid(&format!("{locale}/directives.json"), e.to_string()))?;

        Ok(LocaleAssets {
            persona,
            instructions,
            rules,
            one_question_rule,
            directives,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_locales_load() {
        let a = PromptAssets::bundled();
        assert_eq!(a.locales().collect::<Vec<_>>(), ["en", "ko"]);
        for loc in ["en", "ko"] {
            let l = a.locale(loc).unwrap();
            assert_eq!(l.instructions.len(), 6);
            assert!(l.one_question_rule.starts_with("You MUST ask only one question"));
        }
    }

    #[test]
    fn front_matter_parsing() {
        let t = Template::parse(
            "t",
            "---\nphase: label\nlocale: ko\nplaceholders: [user_name]\n---\nHi {{user_name}}!\n",
        )
        .unwrap();
        assert_eq!(t.phase, Some(Phase::Label));
        let mut v = BTreeMap::new();
        v.insert("user_name", "Mina".to_string());
        assert_eq!(t.render(&v), "Hi Mina!");
    }

    #[test]
    fn rejects_bad_placeholders() {
        let undeclared = "---\nlocale: ko\nplaceholders: []\n---\nHi {{user_name}}";
        assert!(Template::parse("t", undeclared).is_err());
        let unknown = "---\nlocale: ko\nplaceholders: [favorite_color]\n---\nHi";
        assert!(Template::parse("t", unknown).is_err());
        assert!(Template::parse("t", "no front matter").is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let loc = dir.path().join("ko");
        std::fs::create_dir(&loc).unwrap();
        std::fs::write(loc.join("persona.txt"), "---\nlocale: ko\nplaceholders: []\n---\nx").unwrap();
        match PromptAssets::from_dir(dir.path()) {
            Err(AssetError::Missing { locale, file }) => {
                assert_eq!(locale, "ko");
                assert_eq!(file, "explore.txt");
            }
            other => panic!("{other:?}"),
        }
    }
}
