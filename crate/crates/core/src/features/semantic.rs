use std::collections::BTreeMap;

use super::doc::{AnnotationDoc, GroupLexicon};
use super::schema::SlotDescriptor;

/// Seconds searched before and after a semantic annotation for matching words.
pub const SEMANTIC_WINDOW_S: f64 = 1.0;

/// Strict-plurality vote; `None` for an empty input or a tie among the top counts.
pub fn window_majority<T: Ord + Copy>(candidates: &[T]) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for &c in candidates {
        *counts.entry(c).or_default() += 1;
    }
    let top = *counts.values().max()?;
    let mut leaders = counts.iter().filter(|(_, &n)| n == top);
    let (&winner, _) = leaders.next()?;
    leaders.next().is_none().then_some(winner)
}

/// Resolves a semantic annotation on `[start, end]` to a vocabulary index of `slot` by majority
/// vote over lexicon hits among words overlapping the widened window. `None` means the event is
/// dropped.
pub fn classify_semantic_label(
    start: f64,
    end: f64,
    slot: &SlotDescriptor,
    doc: &AnnotationDoc,
    lexicon: &GroupLexicon,
) -> Option<usize> {
    let class = slot.semantic_class()?;
    let (lo, hi) = (start - SEMANTIC_WINDOW_S, end + SEMANTIC_WINDOW_S);
    let groups: Vec<usize> = doc
        .words
        .iter()
        .filter(|w| w.start < hi && w.end > lo && w.matches(class))
        .filter_map(|w| lexicon.lookup(&w.word, class))
        .filter_map(|g| slot.index_of(g))
        .collect();
    window_majority(&groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::doc::WordToken;
    use crate::features::schema::{FeatureSchema, SPOKEN_ENTITY};

    #[test]
    fn majority_rules() {
        assert_eq!(window_majority(&['A', 'A', 'B']), Some('A'));
        assert_eq!(window_majority(&['A', 'B']), None);
        assert_eq!(window_majority::<char>(&[]), None);
        assert_eq!(window_majority(&[3, 1, 3, 1, 2]), None);
        assert_eq!(window_majority(&[7]), Some(7));
    }

    fn entity_slot(schema: &FeatureSchema) -> &SlotDescriptor {
        &schema.slots()[schema.slot_index(SPOKEN_ENTITY).unwrap()]
    }

    #[test]
    fn noun_in_window_decides_entity() {
        let schema = FeatureSchema::default();
        let slot = entity_slot(&schema);
        let mut doc = AnnotationDoc::empty(10.0);
        doc.words = vec![WordToken::new("tall", "ADJ", 2.0, 2.3), WordToken::new("church", "NOUN", 2.4, 2.8)];
        let got = classify_semantic_label(3.0, 3.5, slot, &doc, &GroupLexicon::default());
        assert_eq!(got, slot.index_of("building"));
    }

    #[test]
    fn majority_over_three_nouns() {
        let schema = FeatureSchema::default();
        let slot = entity_slot(&schema);
        let mut doc = AnnotationDoc::empty(10.0);
        doc.words = vec![
            WordToken::new("church", "NOUN", 4.0, 4.3),
            WordToken::new("house", "NN", 4.4, 4.7),
            WordToken::new("street", "NOUN", 4.8, 5.0),
            // outside the widened window
            WordToken::new("road", "NOUN", 7.5, 7.9),
            WordToken::new("alley", "NOUN", 8.0, 8.5),
        ];
        let got = classify_semantic_label(4.5, 5.5, slot, &doc, &GroupLexicon::default());
        assert_eq!(got, slot.index_of("building"));
    }

    #[test]
    fn no_hits_abstains() {
        let schema = FeatureSchema::default();
        let slot = entity_slot(&schema);
        let mut doc = AnnotationDoc::empty(10.0);
        doc.words = vec![WordToken::new("go", "VERB", 1.0, 1.2)];
        assert_eq!(classify_semantic_label(1.0, 2.0, slot, &doc, &GroupLexicon::default()), None);
    }
}
