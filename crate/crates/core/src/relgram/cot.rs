//! Fixed three-step reasoning templates used as think-block text.

use super::{SceneGraphCaption, SituationFrame, Triplet};

fn list_or_none(items: Vec<String>) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join(", ")
    }
}

/// Object existence, object localization, relation existence.
pub fn binary_cot(caption: &SceneGraphCaption, triplets: &[Triplet]) -> String {
    let mut labels: Vec<String> = Vec::new();
    for e in &caption.entities {
        if !labels.contains(&e.label) {
            labels.push(e.label.clone());
        }
    }
    let located = caption
        .entities
        .iter()
        .flat_map(|e| e.boxes.iter().map(move |b| format!("{} at {b}", e.label)))
        .collect();
    let relations = triplets
        .iter()
        .map(|t| format!("{} {} {}", t.subject_label, t.predicate, t.object_label))
        .collect();
    format!(
        "the objects present in the image are {}. the objects are located at {}. the relations present are {}.",
        list_or_none(labels),
        list_or_none(located),
        list_or_none(relations)
    )
}

/// Activity recognition, entities and roles, entity localization.
pub fn nary_cot(frame: &SituationFrame) -> String {
    let engaged = frame
        .roles
        .iter()
        .map(|r| format!("{} as {}", r.entity_label, r.role))
        .collect();
    let located = frame
        .roles
        .iter()
        .map(|r| {
            if r.is_grounded() {
                format!("{} at {}", r.entity_label, r.bbox)
            } else {
                format!("{} not visible", r.entity_label)
            }
        })
        .collect();
    format!(
        "the primary activity is {}. the entities engaged in the activity are {}. the entities are located in {}.",
        if frame.verb.is_empty() { "unknown" } else { &frame.verb },
        list_or_none(engaged),
        list_or_none(located)
    )
}
