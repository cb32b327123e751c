use std::collections::HashSet;

use super::scan::{parse_box_list, tokenize, Cursor, TokenKind};
use super::{
    normalize_label, Diagnostic, DiagnosticKind, Parsed, RoleBinding, SituationFrame, VerbLexicon,
    RESERVED_TAGS,
};
use crate::geom::BoundingBox;

fn first_verb(text: &str, lexicon: &VerbLexicon) -> Option<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .find_map(|w| lexicon.lookup(&w.to_lowercase()).map(str::to_string))
}

/// Reads a grounded situation frame.
///
/// The verb is the first prose word (text outside any tag) that the
/// lexicon knows. Every non-reserved tag pair is a role binding; a role
/// without a following `<box>` is bound to the sentinel box. Repeated role
/// names keep their first binding.
pub fn parse_situation_frame(answer: &str, lexicon: &VerbLexicon) -> Parsed<SituationFrame> {
    let toks = tokenize(answer);
    let mut cur = Cursor::new(&toks);
    let mut diags = Vec::new();
    let mut roles: Vec<RoleBinding> = Vec::new();
    let mut seen = HashSet::new();
    let mut verb: Option<String> = None;

    while let Some(tok) = cur.next() {
        match &tok.kind {
            TokenKind::Text(t) => {
                if verb.is_none() {
                    verb = first_verb(t, lexicon);
                }
            }
            TokenKind::Open(name) if name == "box" => {
                diags.push(Diagnostic::new(tok.start, DiagnosticKind::StrayBox, "<box> does not follow a role"));
                if cur.read_enclosed("box").is_none() {
                    diags.push(Diagnostic::new(tok.start, DiagnosticKind::UnclosedTag, "<box> is not closed"));
                }
            }
            TokenKind::Open(name) if !RESERVED_TAGS.contains(&name.as_str()) => {
                let Some((label_raw, _)) = cur.read_enclosed(name) else {
                    diags.push(Diagnostic::new(
                        tok.start,
                        DiagnosticKind::UnclosedTag,
                        format!("dangling <{name}>"),
                    ));
                    continue;
                };
                let label = normalize_label(&label_raw);
                let bbox = match cur.take_box_group(&mut diags) {
                    None => BoundingBox::SENTINEL,
                    Some((inner, at)) => {
                        let boxes = parse_box_list(&inner, at, &mut diags);
                        if boxes.len() > 1 {
                            diags.push(Diagnostic::new(
                                at,
                                DiagnosticKind::ExtraBox,
                                format!("role <{name}> has {} boxes; keeping the first", boxes.len()),
                            ));
                        }
                        boxes.first().copied().unwrap_or(BoundingBox::SENTINEL)
                    }
                };
                let role = normalize_label(name);
                if label.is_empty() {
                    diags.push(Diagnostic::new(tok.start, DiagnosticKind::EmptyLabel, format!("empty <{name}> entity")));
                } else if !seen.insert(role.clone()) {
                    diags.push(Diagnostic::new(
                        tok.start,
                        DiagnosticKind::DuplicateRole,
                        format!("role <{name}> repeated; keeping the first binding"),
                    ));
                } else {
                    roles.push(RoleBinding {
                        role,
                        entity_label: label,
                        bbox,
                    });
                }
            }
            TokenKind::Close(name) if !matches!(name.as_str(), "think" | "answer") => {
                diags.push(Diagnostic::new(
                    tok.start,
                    DiagnosticKind::StrayCloseTag,
                    format!("</{name}> without a matching open tag"),
                ));
            }
            _ => {}
        }
    }

    if verb.is_none() {
        diags.push(Diagnostic::new(0, DiagnosticKind::MissingVerb, "no known verb in the frame sentence"));
    }
    Parsed {
        value: SituationFrame {
            verb: verb.unwrap_or_default(),
            raw_text: answer.to_string(),
            roles,
        },
        diagnostics: diags,
    }
}

/// Canonical frame text: the verb followed by one tagged binding per role.
/// Sentinel boxes are written out explicitly.
pub fn serialize_frame(f: &SituationFrame) -> String {
    let mut parts = Vec::with_capacity(f.roles.len() + 1);
    if !f.verb.is_empty() {
        parts.push(f.verb.clone());
    }
    for r in &f.roles {
        parts.push(format!("<{0}>{1}</{0}><box>{2}</box>", r.role, r.entity_label, r.bbox));
    }
    parts.join(" ")
}
