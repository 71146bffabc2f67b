//! Curated emotion vocabulary for the Label-phase picker.
//!
//! The catalog is a JSON data file so deployments can ship their own list.
//! The bundled default holds 20 entries; any other size loads fine but is
//! reported as non-default by [`EmotionCatalog::is_default_size`].

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// Number of entries in the bundled picker vocabulary.
pub const DEFAULT_CATALOG_SIZE: usize = 20;

const BUNDLED_CATALOG: &str = include_str!("../assets/emotions.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Valence {
    Positive,
    Negative,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionEntry {
    pub id: String,
    pub emoji: String,
    pub default_valence: Valence,
    pub labels: BTreeMap<String, String>,
}

impl EmotionEntry {
    /// Label for `locale`, falling back to the id when the locale is unknown.
    pub fn label(&self, locale: &str) -> &str {
        self.labels.get(locale).map(String::as_str).unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionCatalog {
    locales: Vec<String>,
    entries: Vec<EmotionEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("catalog document is not valid JSON: {0}")]
    Syntax(#[source] serde_json::Error),
    #[error("malformed catalog field `{field}`: {message}")]
    Shape { field: String, message: String },
    #[error("malformed catalog entry {entry}: {message}")]
    Entry { entry: String, message: String },
    #[error("duplicate emotion id \"{0}\"")]
    DuplicateId(String),
    #[error("unknown emotion id \"{0}\"")]
    NotFound(String),
    #[error("reading catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EmotionCatalog {
    /// The catalog compiled into the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_CATALOG).expect("bundled emotion catalog is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses and validates a catalog document.
    ///
    /// Entries are decoded one at a time so that a malformed document is
    /// reported against the entry that broke it.
    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(CatalogError::Syntax)?;
        let obj = doc.as_object().ok_or_else(|| CatalogError::Shape {
            field: "<root>".into(),
            message: "expected an object".into(),
        })?;

        let locales: Vec<String> = match obj.get("locales") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CatalogError::Shape {
                field: "locales".into(),
                message: e.to_string(),
            })?,
            None => {
                return Err(CatalogError::Shape {
                    field: "locales".into(),
                    message: "missing".into(),
                })
            }
        };
        let raw_entries = obj
            .get("entries")
            .and_then(|v| v.as_array())
            .ok_or_else(|| CatalogError::Shape {
                field: "entries".into(),
                message: "expected an array".into(),
            })?;

        let mut entries = Vec::with_capacity(raw_entries.len());
        for (i, raw) in raw_entries.iter().enumerate() {
            let name = entry_name(i, raw);
            let entry: EmotionEntry =
                serde_json::from_value(raw.clone()).map_err(|e| CatalogError::Entry {
                    entry: name.clone(),
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }

        let catalog = Self { locales, entries };
        catalog.validate()?;
        Ok(catalog)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let name = format!("#{i} (\"{}\")", e.id);
            if e.id.trim().is_empty() {
                return Err(CatalogError::Entry {
                    entry: name,
                    message: "id must be non-empty".into(),
                });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(CatalogError::DuplicateId(e.id.clone()));
            }
            if !is_single_emoji(&e.emoji) {
                return Err(CatalogError::Entry {
                    entry: name,
                    message: format!("emoji {:?} is not a single emoji grapheme", e.emoji),
                });
            }
            for locale in &self.locales {
                if !e.labels.get(locale).is_some_and(|l| !l.trim().is_empty()) {
                    return Err(CatalogError::Entry {
                        entry: name,
                        message: format!("missing label for locale {locale}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn entries(&self) -> &[EmotionEntry] {
        &self.entries
    }

    pub fn locales(&self) -> &[String] {
        &self.locales
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_default_size(&self) -> bool {
        self.entries.len() == DEFAULT_CATALOG_SIZE
    }

    pub fn get(&self, id: &str) -> Option<&EmotionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Resolves free text (an id or any locale label) to a catalog entry,
    /// ignoring case and surrounding whitespace.
    pub fn resolve(&self, text: &str) -> Option<&EmotionEntry> {
        let needle = text.trim().to_lowercase();
        if needle.is_empty() {
            return None;
        }
        self.entries.iter().find(|e| {
            e.id.to_lowercase() == needle || e.labels.values().any(|l| l.to_lowercase() == needle)
        })
    }

    pub fn default_valence(&self, id: &str) -> Result<Valence, CatalogError> {
        self.get(id)
            .map(|e| e.default_valence)
            .ok_or_else(|| CatalogError::NotFound(id.to_string()))
    }
}

fn entry_name(index: usize, raw: &serde_json::Value) -> String {
    match raw.get("id").and_then(|v| v.as_str()) {
        Some(id) => format!("#{index} (\"{id}\")"),
        None => format!("#{index}"),
    }
}

fn is_single_emoji(s: &str) -> bool {
    let mut graphemes = s.graphemes(true);
    let (Some(g), None) = (graphemes.next(), graphemes.next()) else {
        return false;
    };
    // Every emoji sequence starts with a non-ASCII pictograph or a keycap
    // base; plain letters and punctuation are rejected.
    g.chars()
        .next()
        .is_some_and(|c| !c.is_alphanumeric() && !c.is_whitespace() && !c.is_ascii())
}
