use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, SemanticClass, SCHEMA_VERSION, SPOKEN_ENTITY, SPOKEN_RELATIVE_POSITION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    #[serde(rename = "w")]
    pub word: String,
    pub pos: String,
    pub start: f64,
    pub end: f64,
}

impl WordToken {
    pub fn new(word: &str, pos: &str, start: f64, end: f64) -> Self {
        WordToken {
            word: word.to_string(),
            pos: pos.to_string(),
            start,
            end,
        }
    }

    /// Universal or Penn-style noun tags.
    pub fn is_noun(&self) -> bool {
        let p = self.pos.to_ascii_uppercase();
        p == "NOUN" || p == "PROPN" || p.starts_with("NN")
    }

    /// Universal or Penn-style adjective and adverb tags.
    pub fn is_adjective_or_adverb(&self) -> bool {
        let p = self.pos.to_ascii_uppercase();
        p == "ADJ" || p == "ADV" || p.starts_with("JJ") || p.starts_with("RB")
    }

    pub fn matches(&self, class: SemanticClass) -> bool {
        match class {
            SemanticClass::Entity => self.is_noun(),
            SemanticClass::Position => self.is_adjective_or_adverb(),
        }
    }
}

/// Time-interval annotation tiers plus word timings for one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DocFile")]
pub struct AnnotationDoc {
    pub duration_s: f64,
    pub tiers: BTreeMap<String, Vec<Interval>>,
    pub words: Vec<WordToken>,
}

#[derive(Deserialize)]
struct DocFile {
    duration_s: f64,
    #[serde(default)]
    tiers: BTreeMap<String, Vec<Interval>>,
    #[serde(default)]
    words: Vec<WordToken>,
}

impl TryFrom<DocFile> for AnnotationDoc {
    type Error = Error;

    fn try_from(f: DocFile) -> Result<Self> {
        AnnotationDoc::new(f.duration_s, f.tiers, f.words)
    }
}

impl AnnotationDoc {
    pub fn new(
        duration_s: f64,
        mut tiers: BTreeMap<String, Vec<Interval>>,
        words: Vec<WordToken>,
    ) -> Result<Self> {
        if !(duration_s >= 0.0 && duration_s.is_finite()) {
            return Err(Error::invalid(format!("duration must be non-negative, got {duration_s}")));
        }
        let within = |s: f64, e: f64| s.is_finite() && e.is_finite() && 0.0 <= s && s < e && e <= duration_s;
        for (name, intervals) in tiers.iter_mut() {
            intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
            for iv in intervals.iter() {
                if !within(iv.start, iv.end) {
                    return Err(Error::invalid(format!(
                        "tier {name:?}: interval [{}, {}] outside [0, {duration_s}] or empty",
                        iv.start, iv.end
                    )));
                }
            }
            for pair in intervals.windows(2) {
                if pair[1].start < pair[0].end {
                    return Err(Error::invalid(format!(
                        "tier {name:?}: intervals overlap at {}s",
                        pair[1].start
                    )));
                }
            }
        }
        for w in &words {
            if !within(w.start, w.end) {
                return Err(Error::invalid(format!(
                    "word {:?} at [{}, {}] outside [0, {duration_s}]",
                    w.word, w.start, w.end
                )));
            }
        }
        Ok(AnnotationDoc {
            duration_s,
            tiers,
            words,
        })
    }

    pub fn empty(duration_s: f64) -> Self {
        AnnotationDoc {
            duration_s,
            tiers: BTreeMap::new(),
            words: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

/// Word -> group lookup for entity nouns and positional adjectives/adverbs. Groups are stored by
/// name; [`GroupLexicon::validate`] checks them against the schema vocabularies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLexicon {
    pub schema_version: u32,
    pub nouns: BTreeMap<String, String>,
    pub positional: BTreeMap<String, String>,
}

const DEFAULT_LEXICON: &str = include_str!("../../data/default_lexicon.json");

impl Default for GroupLexicon {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl GroupLexicon {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let lex: GroupLexicon = serde_json::from_slice(&text)?;
        if lex.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported lexicon schema_version {}", lex.schema_version)));
        }
        Ok(lex)
    }

    /// Every mapped group must exist in the matching schema vocabulary.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        for (words, group) in [(&self.nouns, SPOKEN_ENTITY), (&self.positional, SPOKEN_RELATIVE_POSITION)] {
            let slot = &schema.slots()[schema.slot_index(group).expect("schema validated")];
            for (word, g) in words {
                if slot.index_of(g).is_none() {
                    return Err(Error::Schema(format!("lexicon maps {word:?} to unknown {group} group {g:?}")));
                }
            }
        }
        Ok(())
    }

    /// Group name for a word of the given class.
    pub fn lookup(&self, word: &str, class: SemanticClass) -> Option<&str> {
        let table = match class {
            SemanticClass::Entity => &self.nouns,
            SemanticClass::Position => &self.positional,
        };
        table.get(&word.to_lowercase()).map(String::as_str)
    }
}
