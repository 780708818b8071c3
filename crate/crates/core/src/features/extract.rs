use super::doc::{AnnotationDoc, GroupLexicon};
use super::occurrence::occurrence_timeline;
use super::schema::{FeatureSchema, SlotKind, CATEGORICAL_SLOTS};
use super::semantic::classify_semantic_label;
use super::timeline::{FeatureTimeline, FrameLabels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionStats {
    /// Entity and relative-position annotations seen.
    pub semantic_events: usize,
    /// Of those, resolved to a group and kept.
    pub classified: usize,
    /// Tiers that matched no slot or are computed rather than read.
    pub ignored_tiers: Vec<String>,
}

impl ExtractionStats {
    pub fn dropped(&self) -> usize {
        self.semantic_events - self.classified
    }
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub timeline: FeatureTimeline,
    pub stats: ExtractionStats,
}

/// Frames whose timestamp `f / fps` lies in `[start, end)`.
pub(crate) fn frames_in(start: f64, end: f64, fps: f64, frame_count: usize) -> std::ops::Range<usize> {
    let first = ((start * fps).floor().max(0.0) as usize).saturating_sub(1);
    let mut lo = first;
    while lo < frame_count && (lo as f64 / fps) < start {
        lo += 1;
    }
    let mut hi = lo;
    while hi < frame_count && (hi as f64 / fps) < end {
        hi += 1;
    }
    lo..hi
}

/// Converts annotation tiers into per-frame labels.
///
/// Plain categorical tiers map their value into the slot vocabulary. Entity and relative-position
/// tiers are resolved through the lexicon by majority vote over nearby words; unresolved events are
/// dropped. The occurrence slot is computed from every kept semantic event.
pub fn feature_timeline(
    doc: &AnnotationDoc,
    schema: &FeatureSchema,
    lexicon: &GroupLexicon,
    fps: f64,
) -> Result<Extraction> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    let n = (doc.duration_s * fps).round() as usize;
    let mut frames = vec![FrameLabels::MISSING; n];
    let mut stats = ExtractionStats::default();
    let mut semantic_spans = Vec::new();

    for (tier, intervals) in &doc.tiers {
        let Some(slot_idx) = schema.slot_index(tier) else {
            log::warn!("tier {tier:?} matches no feature slot, ignored");
            stats.ignored_tiers.push(tier.clone());
            continue;
        };
        let slot = &schema.slots()[slot_idx];
        if slot.kind == SlotKind::Continuous || slot_idx >= CATEGORICAL_SLOTS {
            log::warn!("tier {tier:?} is computed from semantic events, ignored");
            stats.ignored_tiers.push(tier.clone());
            continue;
        }
        for iv in intervals {
            let value = if slot.semantic_class().is_some() {
                stats.semantic_events += 1;
                match classify_semantic_label(iv.start, iv.end, slot, doc, lexicon) {
                    Some(v) => {
                        stats.classified += 1;
                        semantic_spans.push((iv.start, iv.end));
                        v
                    }
                    None => continue,
                }
            } else {
                slot.index_of(&iv.value).ok_or_else(|| {
                    Error::Schema(format!(
                        "tier {tier:?} at {}s: value {:?} not in vocabulary {:?}",
                        iv.start, iv.value, slot.vocabulary
                    ))
                })?
            };
            for f in frames_in(iv.start, iv.end, fps, n) {
                frames[f].categorical[slot_idx] = value as i32;
            }
        }
    }

    let occurrence = occurrence_timeline(&semantic_spans, doc.duration_s, fps)?;
    for (f, o) in frames.iter_mut().zip(occurrence) {
        f.occurrence = o;
    }
    Ok(Extraction {
        timeline: FeatureTimeline::new(fps, frames)?,
        stats,
    })
}
