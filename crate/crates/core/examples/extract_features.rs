//! Turns annotation tiers into a per-frame feature timeline.

use std::collections::BTreeMap;

use gesture_synth::features::{feature_timeline, AnnotationDoc, FeatureSchema, GroupLexicon, Interval, WordToken};

fn iv(start: f64, end: f64, value: &str) -> Interval {
    Interval { start, end, value: value.into() }
}

fn main() -> gesture_synth::Result<()> {
    let mut tiers = BTreeMap::new();
    tiers.insert("Right Gesture Phase".to_string(), vec![iv(1.0, 1.6, "preparation"), iv(1.6, 2.4, "stroke"), iv(2.4, 3.0, "retraction")]);
    tiers.insert("Right Wrist Position".to_string(), vec![iv(1.6, 2.4, "periphery")]);
    tiers.insert("Spoken Entity".to_string(), vec![iv(2.0, 2.5, "event")]);
    let words = vec![WordToken::new("the", "DT", 1.5, 2.0), WordToken::new("church", "NN", 2.0, 2.5)];
    let doc = AnnotationDoc::new(4.0, tiers, words)?;
    let schema = FeatureSchema::default();
    let ex = feature_timeline(&doc, &schema, &GroupLexicon::default(), 15.0)?;
    println!("{} frames, {:?}", ex.timeline.len(), ex.stats);
    let wrist = schema.slot_index("Right Wrist Position").expect("slot exists");
    for (f, labels) in ex.timeline.frames().iter().enumerate().step_by(5) {
        println!("t={:.2}s wrist {:>2} occurrence {:.2}", f as f64 / 15.0, labels.categorical[wrist], labels.occurrence);
    }
    Ok(())
}
