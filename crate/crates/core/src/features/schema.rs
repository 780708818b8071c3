use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Label slots per frame: 16 categorical and one continuous occurrence slot.
pub const SLOT_COUNT: usize = 17;
pub const CATEGORICAL_SLOTS: usize = 16;
/// Marker for a categorical slot without a label.
pub const MISSING: i32 = -1;

/// The seven per-hand annotation groups.
pub const HAND_GROUPS: [&str; 7] = [
    "Gesture Phase",
    "Gesture Phrase",
    "Gesture Relative Position",
    "Hand Shape",
    "Wrist Position",
    "Movement Extent",
    "Gesture Practice",
];
pub const SPOKEN_ENTITY: &str = "Spoken Entity";
pub const SPOKEN_RELATIVE_POSITION: &str = "Spoken Relative Position";
pub const GESTURE_RELATIVE_POSITION: &str = "Gesture Relative Position";
pub const ENTITY_OCCURRENCE: &str = "Entity Occurrence";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotHand {
    Left,
    Right,
    None,
}

/// Word class whose lexicon resolves a semantic slot's label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemanticClass {
    /// Nouns naming entities.
    Entity,
    /// Adjectives and adverbs naming relative positions.
    Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDescriptor {
    pub name: String,
    pub group: String,
    pub kind: SlotKind,
    pub hand: SlotHand,
    #[serde(default)]
    pub vocabulary: Vec<String>,
}

impl SlotDescriptor {
    pub fn semantic_class(&self) -> Option<SemanticClass> {
        match self.group.as_str() {
            SPOKEN_ENTITY => Some(SemanticClass::Entity),
            SPOKEN_RELATIVE_POSITION | GESTURE_RELATIVE_POSITION => Some(SemanticClass::Position),
            _ => None,
        }
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.vocabulary.iter().position(|v| v.eq_ignore_ascii_case(value))
    }
}

/// The 17-slot label space. Categorical slots come first, in order; the occurrence slot is last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct FeatureSchema {
    slots: Vec<SlotDescriptor>,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    schema_version: u32,
    slots: Vec<SlotDescriptor>,
}

impl TryFrom<SchemaFile> for FeatureSchema {
    type Error = Error;

    fn try_from(f: SchemaFile) -> Result<Self> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported schema_version {}", f.schema_version)));
        }
        FeatureSchema::new(f.slots)
    }
}

impl From<FeatureSchema> for SchemaFile {
    fn from(s: FeatureSchema) -> Self {
        SchemaFile {
            schema_version: SCHEMA_VERSION,
            slots: s.slots,
        }
    }
}

const DEFAULT_SCHEMA: &str = include_str!("../../data/default_schema.json");

impl Default for FeatureSchema {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }
}

impl FeatureSchema {
    pub fn new(slots: Vec<SlotDescriptor>) -> Result<Self> {
        if slots.len() != SLOT_COUNT {
            return Err(Error::Schema(format!("expected {SLOT_COUNT} slots, got {}", slots.len())));
        }
        let mut names = HashSet::new();
        for (i, slot) in slots.iter().enumerate() {
            if !names.insert(slot.name.as_str()) {
                return Err(Error::Schema(format!("duplicate slot name {:?}", slot.name)));
            }
            let expect_continuous = i == SLOT_COUNT - 1;
            match (slot.kind, expect_continuous) {
                (SlotKind::Continuous, true) => {
                    if slot.group != ENTITY_OCCURRENCE {
                        return Err(Error::Schema(format!(
                            "continuous slot must be {ENTITY_OCCURRENCE:?}, got {:?}",
                            slot.group
                        )));
                    }
                }
                (SlotKind::Categorical, false) => {
                    if slot.vocabulary.is_empty() {
                        return Err(Error::Schema(format!("slot {:?} has an empty vocabulary", slot.name)));
                    }
                    let mut seen = HashSet::new();
                    for v in &slot.vocabulary {
                        if !seen.insert(v.to_ascii_lowercase()) {
                            return Err(Error::Schema(format!("slot {:?} repeats value {v:?}", slot.name)));
                        }
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "slot {i} ({:?}): the first {CATEGORICAL_SLOTS} slots must be categorical and the last continuous",
                        slot.name
                    )))
                }
            }
        }
        // 7 per-hand groups on each hand, plus the three hand-independent groups.
        let mut per_group: BTreeMap<&str, Vec<SlotHand>> = BTreeMap::new();
        for s in &slots {
            per_group.entry(s.group.as_str()).or_default().push(s.hand);
        }
        for g in HAND_GROUPS {
            let hands = per_group.get(g).cloned().unwrap_or_default();
            if hands.len() != 2 || !hands.contains(&SlotHand::Left) || !hands.contains(&SlotHand::Right) {
                return Err(Error::Schema(format!("group {g:?} must appear once per hand")));
            }
        }
        for (g, size) in [(SPOKEN_ENTITY, Some(18)), (SPOKEN_RELATIVE_POSITION, Some(13)), (ENTITY_OCCURRENCE, None)] {
            let matching: Vec<_> = slots.iter().filter(|s| s.group == g).collect();
            if matching.len() != 1 || matching[0].hand != SlotHand::None {
                return Err(Error::Schema(format!("group {g:?} must appear exactly once without a hand")));
            }
            if let Some(size) = size {
                if matching[0].vocabulary.len() != size {
                    return Err(Error::Schema(format!(
                        "{g:?} needs {size} groups, found {}",
                        matching[0].vocabulary.len()
                    )));
                }
            }
        }
        Ok(FeatureSchema { slots })
    }

    pub fn slots(&self) -> &[SlotDescriptor] {
        &self.slots
    }

    pub fn categorical(&self) -> &[SlotDescriptor] {
        &self.slots[..CATEGORICAL_SLOTS]
    }

    /// Vocabulary size per categorical slot.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.categorical().iter().map(|s| s.vocabulary.len()).collect()
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    /// Categorical slot of `group` on `hand`.
    pub fn find(&self, group: &str, hand: SlotHand) -> Option<usize> {
        self.categorical().iter().position(|s| s.group == group && s.hand == hand)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schema_has_seventeen_slots() {
        let s = FeatureSchema::default();
        assert_eq!(s.slots().len(), 17);
        assert_eq!(s.categorical().len(), 16);
        assert_eq!(s.slots()[16].kind, SlotKind::Continuous);
        let entity = s.slot_index(SPOKEN_ENTITY).unwrap();
        assert_eq!(s.slots()[entity].vocabulary.len(), 18);
        let pos = s.slot_index(SPOKEN_RELATIVE_POSITION).unwrap();
        assert_eq!(s.slots()[pos].vocabulary.len(), 13);
        let hand_specific = s.slots().iter().filter(|d| d.hand != SlotHand::None).count();
        assert_eq!(hand_specific, 14);
        assert_eq!(s.find("Gesture Phase", SlotHand::Right), s.slot_index("Right Gesture Phase"));
    }

    #[test]
    fn rejects_bad_vocabularies() {
        let base = FeatureSchema::default();
        let mut slots = base.slots().to_vec();
        slots[0].vocabulary.push("stroke".into());
        assert!(FeatureSchema::new(slots).is_err());

        let mut slots = base.slots().to_vec();
        slots[3].vocabulary.clear();
        assert!(FeatureSchema::new(slots).is_err());

        let mut slots = base.slots().to_vec();
        slots.pop();
        assert!(FeatureSchema::new(slots).is_err());

        let mut slots = base.slots().to_vec();
        slots[14].vocabulary.pop();
        assert!(FeatureSchema::new(slots).is_err());
    }

    #[test]
    fn version_is_checked() {
        let text = serde_json::to_string(&FeatureSchema::default()).unwrap();
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        assert!(serde_json::from_str::<FeatureSchema>(&bumped).is_err());
        assert!(serde_json::from_str::<FeatureSchema>(&text).is_ok());
    }
}
