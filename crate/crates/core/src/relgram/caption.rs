use super::scan::{format_box_list, parse_box_list, tokenize, Cursor, TokenKind};
use super::{
    normalize_label, Diagnostic, DiagnosticKind, EntityMention, Parsed, PredicateMention,
    SceneGraphCaption, Triplet, UNKNOWN_LABEL,
};
use crate::geom::BoundingBox;

/// Reads every `<ref>` and `<pred>` mention from a caption answer.
pub fn parse_scene_graph_caption(answer: &str) -> Parsed<SceneGraphCaption> {
    let toks = tokenize(answer);
    let mut cur = Cursor::new(&toks);
    let mut diags = Vec::new();
    let mut caption = SceneGraphCaption {
        raw_text: answer.to_string(),
        ..Default::default()
    };

    while let Some(tok) = cur.next() {
        match &tok.kind {
            TokenKind::Open(name) if name == "ref" || name == "pred" => {
                let Some((label_raw, _)) = cur.read_enclosed(name) else {
                    diags.push(Diagnostic::new(
                        tok.start,
                        DiagnosticKind::UnclosedTag,
                        format!("dangling <{name}>"),
                    ));
                    continue;
                };
                let label = normalize_label(&label_raw);
                if name == "ref" {
                    let mut boxes = Vec::new();
                    let mut groups = 0;
                    while let Some((inner, at)) = cur.take_box_group(&mut diags) {
                        groups += 1;
                        boxes.extend(parse_box_list(&inner, at, &mut diags));
                    }
                    if groups == 0 {
                        diags.push(Diagnostic::new(
                            tok.start,
                            DiagnosticKind::MissingBox,
                            format!("<ref>{label}</ref> has no <box>"),
                        ));
                    }
                    if label.is_empty() {
                        diags.push(Diagnostic::new(tok.start, DiagnosticKind::EmptyLabel, "empty <ref> label"));
                    } else if !boxes.is_empty() {
                        caption.entities.push(EntityMention { label, boxes });
                    }
                } else {
                    let subj = cur.take_box_group(&mut diags);
                    let obj = subj.as_ref().and_then(|_| cur.take_box_group(&mut diags));
                    let (Some((si, sat)), Some((oi, oat))) = (subj, obj) else {
                        diags.push(Diagnostic::new(
                            tok.start,
                            DiagnosticKind::MissingBox,
                            format!("<pred>{label}</pred> needs a subject and an object <box>"),
                        ));
                        continue;
                    };
                    let subject_boxes = parse_box_list(&si, sat, &mut diags);
                    let object_boxes = parse_box_list(&oi, oat, &mut diags);
                    if label.is_empty() {
                        diags.push(Diagnostic::new(tok.start, DiagnosticKind::EmptyLabel, "empty <pred> label"));
                    } else if !subject_boxes.is_empty() && !object_boxes.is_empty() {
                        caption.predicates.push(PredicateMention {
                            predicate: label,
                            subject_boxes,
                            object_boxes,
                        });
                    }
                }
            }
            TokenKind::Open(name) if name == "box" => {
                diags.push(Diagnostic::new(
                    tok.start,
                    DiagnosticKind::StrayBox,
                    "<box> does not follow a <ref> or <pred>",
                ));
                if cur.read_enclosed("box").is_none() {
                    diags.push(Diagnostic::new(tok.start, DiagnosticKind::UnclosedTag, "<box> is not closed"));
                }
            }
            TokenKind::Close(name) if matches!(name.as_str(), "ref" | "pred" | "box") => {
                diags.push(Diagnostic::new(
                    tok.start,
                    DiagnosticKind::StrayCloseTag,
                    format!("</{name}> without a matching open tag"),
                ));
            }
            _ => {}
        }
    }

    Parsed {
        value: caption,
        diagnostics: diags,
    }
}

/// Canonical caption text: all entities, then all predicates, space separated.
pub fn serialize_caption(c: &SceneGraphCaption) -> String {
    let ents = c
        .entities
        .iter()
        .map(|e| format!("<ref>{}</ref><box>{}</box>", e.label, format_box_list(&e.boxes)));
    let preds = c.predicates.iter().map(|p| {
        format!(
            "<pred>{}</pred><box>{}</box><box>{}</box>",
            p.predicate,
            format_box_list(&p.subject_boxes),
            format_box_list(&p.object_boxes)
        )
    });
    ents.chain(preds).collect::<Vec<_>>().join(" ")
}

fn resolve(c: &SceneGraphCaption, b: &BoundingBox) -> Option<String> {
    c.entities
        .iter()
        .find(|e| e.boxes.contains(b))
        .map(|e| e.label.clone())
}

/// Expands each predicate over the Cartesian product of its subject and
/// object boxes, naming endpoints by the first `<ref>` carrying an
/// identical box.
pub fn extract_triplets(caption: &SceneGraphCaption) -> Parsed<Vec<Triplet>> {
    let mut out = Vec::new();
    let mut diags = Vec::new();
    let label_for = |b: &BoundingBox, diags: &mut Vec<Diagnostic>| {
        resolve(caption, b).unwrap_or_else(|| {
            diags.push(Diagnostic::new(
                0,
                DiagnosticKind::UnresolvedBox,
                format!("box {b} is not attached to any <ref>"),
            ));
            UNKNOWN_LABEL.to_string()
        })
    };
    for p in &caption.predicates {
        for sb in &p.subject_boxes {
            for ob in &p.object_boxes {
                let subject_label = label_for(sb, &mut diags);
                let object_label = label_for(ob, &mut diags);
                out.push(Triplet {
                    subject_label,
                    subject_box: *sb,
                    predicate: p.predicate.clone(),
                    object_label,
                    object_box: *ob,
                });
            }
        }
    }
    Parsed {
        value: out,
        diagnostics: diags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: i64, y1: i64, x2: i64, y2: i64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn single_entity() {
        let p = parse_scene_graph_caption("<ref>person</ref><box>[[1,2,3,4]]</box>");
        assert!(p.is_clean());
        assert_eq!(
            p.value.entities,
            vec![EntityMention {
                label: "person".into(),
                boxes: vec![bb(1, 2, 3, 4)]
            }]
        );
    }

    #[test]
    fn empty_caption() {
        let p = parse_scene_graph_caption("");
        assert!(p.is_clean());
        assert!(p.value.entities.is_empty() && p.value.predicates.is_empty());
    }

    #[test]
    fn single_predicate() {
        let p = parse_scene_graph_caption("<pred>on</pred><box>[[1,1,2,2]]</box><box>[[3,3,4,4]]</box>");
        assert!(p.is_clean());
        assert_eq!(
            p.value.predicates,
            vec![PredicateMention {
                predicate: "on".into(),
                subject_boxes: vec![bb(1, 1, 2, 2)],
                object_boxes: vec![bb(3, 3, 4, 4)],
            }]
        );
    }

    #[test]
    fn prose_and_multiple_boxes() {
        let text = "A <ref>Person</ref><box>[[1,1,2,2],[5,5,6,6]]</box> is sitting \
                    <pred>on</pred> <box>[[1,1,2,2],[5,5,6,6]]</box> <box>[[3,3,4,4]]</box> a \
                    <ref>bench</ref><box>[[3,3,4,4]]</box>.";
        let p = parse_scene_graph_caption(text);
        assert!(p.is_clean(), "{:?}", p.diagnostics);
        assert_eq!(p.value.entities[0].label, "person");
        assert_eq!(p.value.entities[0].boxes.len(), 2);
        let t = extract_triplets(&p.value);
        assert!(t.is_clean());
        assert_eq!(t.value.len(), 2);
        assert!(t.value.iter().all(|t| t.object_label == "bench" && t.subject_label == "person"));
    }

    #[test]
    fn extraction_resolves_labels() {
        let p = parse_scene_graph_caption(
            "<ref>person</ref><box>[[1,1,2,2]]</box><ref>bench</ref><box>[[3,3,4,4]]</box>\
             <pred>on</pred><box>[[1,1,2,2]]</box><box>[[3,3,4,4]]</box>",
        );
        let t = extract_triplets(&p.value).value;
        assert_eq!(
            t,
            vec![Triplet {
                subject_label: "person".into(),
                subject_box: bb(1, 1, 2, 2),
                predicate: "on".into(),
                object_label: "bench".into(),
                object_box: bb(3, 3, 4, 4),
            }]
        );
    }

    #[test]
    fn unresolved_subject_is_unknown() {
        let p = parse_scene_graph_caption(
            "<ref>bench</ref><box>[[3,3,4,4]]</box><pred>on</pred><box>[[9,9,10,10]]</box><box>[[3,3,4,4]]</box>",
        );
        let t = extract_triplets(&p.value);
        assert_eq!(t.value[0].subject_label, UNKNOWN_LABEL);
        assert_eq!(t.value[0].object_label, "bench");
        assert_eq!(t.diagnostics[0].kind, DiagnosticKind::UnresolvedBox);
    }

    #[test]
    fn cartesian_expansion() {
        let p = parse_scene_graph_caption(
            "<ref>man</ref><box>[[1,1,2,2],[5,5,6,6]]</box><ref>dog</ref><box>[[3,3,4,4]]</box>\
             <pred>beside</pred><box>[[1,1,2,2],[5,5,6,6]]</box><box>[[3,3,4,4]]</box>",
        );
        assert_eq!(extract_triplets(&p.value).value.len(), 2);
    }

    #[test]
    fn dangling_and_stray_tags() {
        let p = parse_scene_graph_caption("hello <ref>cat");
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::UnclosedTag);
        assert_eq!(p.diagnostics[0].offset, 6);

        let p = parse_scene_graph_caption("<ref>cat</ref> and then");
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::MissingBox);
        assert!(p.value.entities.is_empty());

        let p = parse_scene_graph_caption("<box>[[1,1,2,2]]</box> </pred>");
        let kinds: Vec<_> = p.diagnostics.iter().map(|d| d.kind).collect();
        assert_eq!(kinds, vec![DiagnosticKind::StrayBox, DiagnosticKind::StrayCloseTag]);

        let p = parse_scene_graph_caption("<pred>on</pred><box>[[1,1,2,2]]</box>");
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::MissingBox);

        let p = parse_scene_graph_caption("<ref>cat</ref><box>[[1,1,x,2]]</box>");
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::MalformedBox);
    }

    #[test]
    fn serialize_round_trip() {
        let c = SceneGraphCaption {
            raw_text: String::new(),
            entities: vec![
                EntityMention { label: "person".into(), boxes: vec![bb(1, 1, 2, 2)] },
                EntityMention { label: "dining table".into(), boxes: vec![bb(3, 3, 4, 4), bb(0, 0, 9, 9)] },
                EntityMention { label: "cup".into(), boxes: vec![bb(5, 5, 6, 6)] },
            ],
            predicates: vec![PredicateMention {
                predicate: "in front of".into(),
                subject_boxes: vec![bb(1, 1, 2, 2)],
                object_boxes: vec![bb(3, 3, 4, 4)],
            }],
        };
        let text = serialize_caption(&c);
        let back = parse_scene_graph_caption(&text);
        assert!(back.is_clean());
        assert_eq!(back.value.entities, c.entities);
        assert_eq!(back.value.predicates, c.predicates);
    }
}
