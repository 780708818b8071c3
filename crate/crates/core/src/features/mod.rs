//! Form and meaning feature labels: schema, annotation documents, lexicon-based semantic
//! classification, occurrence ramps and per-frame timelines.

mod doc;
mod extract;
mod occurrence;
mod schema;
mod semantic;
mod timeline;

pub use doc::{AnnotationDoc, GroupLexicon, Interval, WordToken};
pub use extract::{feature_timeline, Extraction, ExtractionStats};
pub(crate) use extract::frames_in;
pub use occurrence::{occurrence_ramp, occurrence_timeline, OCCURRENCE_FALL_S, OCCURRENCE_RISE_S};
pub use schema::{
    FeatureSchema, SemanticClass, SlotDescriptor, SlotHand, SlotKind, CATEGORICAL_SLOTS, ENTITY_OCCURRENCE,
    GESTURE_RELATIVE_POSITION, HAND_GROUPS, MISSING, SCHEMA_VERSION, SLOT_COUNT, SPOKEN_ENTITY,
    SPOKEN_RELATIVE_POSITION,
};
pub use semantic::{classify_semantic_label, window_majority, SEMANTIC_WINDOW_S};
pub use timeline::{FeatureTimeline, FrameLabels};
