use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, SlotHand, CATEGORICAL_SLOTS, HAND_GROUPS, MISSING, SCHEMA_VERSION};
use crate::error::{Error, Result};

/// Labels of one frame: 16 categorical indices (-1 = missing) and the occurrence value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLabels {
    pub categorical: [i32; CATEGORICAL_SLOTS],
    pub occurrence: f32,
}

impl FrameLabels {
    pub const MISSING: FrameLabels = FrameLabels {
        categorical: [MISSING; CATEGORICAL_SLOTS],
        occurrence: 0.0,
    };

    pub fn is_missing(&self) -> bool {
        self.categorical.iter().all(|&v| v == MISSING) && self.occurrence == 0.0
    }

    pub fn validate(&self, vocab_sizes: &[usize]) -> Result<()> {
        for (slot, (&v, &size)) in self.categorical.iter().zip(vocab_sizes).enumerate() {
            if v != MISSING && !(0..size as i32).contains(&v) {
                return Err(Error::invalid(format!(
                    "slot {slot}: label {v} outside -1 or [0, {size})"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.occurrence) {
            return Err(Error::invalid(format!("occurrence {} outside [0, 1]", self.occurrence)));
        }
        Ok(())
    }
}

/// Per-frame form/meaning labels at a fixed frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimelineFile", into = "TimelineFile")]
pub struct FeatureTimeline {
    fps: f64,
    frames: Vec<FrameLabels>,
}

#[derive(Serialize, Deserialize)]
struct TimelineFile {
    schema_version: u32,
    fps: f64,
    categorical: Vec<[i32; CATEGORICAL_SLOTS]>,
    occurrence: Vec<f32>,
}

impl TryFrom<TimelineFile> for FeatureTimeline {
    type Error = Error;

    fn try_from(f: TimelineFile) -> Result<Self> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported timeline schema_version {}", f.schema_version)));
        }
        if f.categorical.len() != f.occurrence.len() {
            return Err(Error::invalid("categorical and occurrence lengths differ"));
        }
        let frames = f
            .categorical
            .into_iter()
            .zip(f.occurrence)
            .map(|(categorical, occurrence)| FrameLabels { categorical, occurrence })
            .collect();
        FeatureTimeline::new(f.fps, frames)
    }
}

impl From<FeatureTimeline> for TimelineFile {
    fn from(t: FeatureTimeline) -> Self {
        TimelineFile {
            schema_version: SCHEMA_VERSION,
            fps: t.fps,
            categorical: t.frames.iter().map(|f| f.categorical).collect(),
            occurrence: t.frames.iter().map(|f| f.occurrence).collect(),
        }
    }
}

impl FeatureTimeline {
    pub fn new(fps: f64, frames: Vec<FrameLabels>) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.categorical.iter().any(|&v| v < MISSING) || !(0.0..=1.0).contains(&f.occurrence) {
                return Err(Error::invalid(format!("frame {i} carries out-of-range labels")));
            }
        }
        Ok(FeatureTimeline { fps, frames })
    }

    pub fn missing(fps: f64, frame_count: usize) -> Self {
        FeatureTimeline {
            fps,
            frames: vec![FrameLabels::MISSING; frame_count],
        }
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[FrameLabels] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [FrameLabels] {
        &mut self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Labels for frame `index`; frames outside the timeline are missing.
    pub fn get(&self, index: i64) -> FrameLabels {
        if index < 0 {
            return FrameLabels::MISSING;
        }
        self.frames.get(index as usize).copied().unwrap_or(FrameLabels::MISSING)
    }

    /// Checks every label against the schema vocabularies.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        let sizes = schema.vocab_sizes();
        for (i, f) in self.frames.iter().enumerate() {
            f.validate(&sizes).map_err(|e| Error::invalid(format!("frame {i}: {e}")))?;
        }
        Ok(())
    }

    /// Number of frames where `slot` carries a label.
    pub fn labeled_count(&self, slot: usize) -> usize {
        self.frames.iter().filter(|f| f.categorical[slot] != MISSING).count()
    }

    /// Exchanges every left-hand slot with its right-hand counterpart.
    pub fn swap_hands(&self, schema: &FeatureSchema) -> FeatureTimeline {
        let pairs: Vec<(usize, usize)> = HAND_GROUPS
            .iter()
            .map(|g| {
                (
                    schema.find(g, SlotHand::Left).expect("schema validated"),
                    schema.find(g, SlotHand::Right).expect("schema validated"),
                )
            })
            .collect();
        let mut out = self.clone();
        for f in out.frames.iter_mut() {
            for &(l, r) in &pairs {
                f.categorical.swap(l, r);
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_vec(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
