//! Structured relation-output grammars.
//!
//! Three answer formats are understood:
//!
//! * scene graph captions, where entities are `<ref>label</ref><box>[[..]]</box>`
//!   and relations are `<pred>label</pred><box>subjects</box><box>objects</box>`;
//! * scene graph lists, `[["subj", [x1,y1,x2,y2], "obj", [x1,y1,x2,y2], "rel"], ..]`;
//! * grounded situation frames, a verb sentence carrying
//!   `<role>entity</role><box>[x1,y1,x2,y2]</box>` bindings.
//!
//! Every parser is total: malformed input yields [`Diagnostic`]s alongside
//! whatever structure could be recovered. See `docs/grammar.md` for the
//! rules in ABNF form.

mod caption;
mod cot;
mod envelope;
mod frame;
mod lexicon;
mod list;
mod prompt;
mod scan;

use serde::{Deserialize, Serialize};

use crate::geom::BoundingBox;

pub use caption::{extract_triplets, parse_scene_graph_caption, serialize_caption};
pub use cot::{binary_cot, nary_cot};
pub use envelope::{parse_envelope, wrap_envelope, Envelope};
pub use frame::{parse_situation_frame, serialize_frame};
pub use lexicon::VerbLexicon;
pub use list::{parse_scene_graph_list, serialize_list};
pub use prompt::{render_prompt, PromptError, PromptKind};

/// Tag names with fixed meaning; never treated as semantic roles.
pub const RESERVED_TAGS: [&str; 5] = ["think", "answer", "ref", "pred", "box"];

pub const UNKNOWN_LABEL: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    UnclosedTag,
    StrayCloseTag,
    StrayBox,
    MissingBox,
    MalformedBox,
    InvalidBox,
    ExtraBox,
    EmptyLabel,
    MalformedList,
    ArityMismatch,
    MissingVerb,
    DuplicateRole,
    UnresolvedBox,
    TaskMismatch,
}

/// A recoverable problem found at `offset` (bytes into the parsed text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub offset: usize,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    pub fn new(offset: usize, kind: DiagnosticKind, message: impl Into<String>) -> Self {
        Self {
            offset,
            kind,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {:?}: {}", self.offset, self.kind, self.message)
    }
}

/// A parse result with the diagnostics collected along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub diagnostics: Vec<Diagnostic>,
}

impl<T> Parsed<T> {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub label: String,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateMention {
    pub predicate: String,
    pub subject_boxes: Vec<BoundingBox>,
    pub object_boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SceneGraphCaption {
    pub raw_text: String,
    pub entities: Vec<EntityMention>,
    pub predicates: Vec<PredicateMention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject_label: String,
    pub subject_box: BoundingBox,
    pub predicate: String,
    pub object_label: String,
    pub object_box: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub role: String,
    pub entity_label: String,
    pub bbox: BoundingBox,
}

impl RoleBinding {
    pub fn is_grounded(&self) -> bool {
        !self.bbox.is_sentinel()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SituationFrame {
    pub verb: String,
    pub raw_text: String,
    pub roles: Vec<RoleBinding>,
}

impl SituationFrame {
    pub fn role(&self, name: &str) -> Option<&RoleBinding> {
        self.roles.iter().find(|r| r.role == name)
    }
}

/// Which relation task an answer (or a ground-truth record) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Nary,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Binary => "binary",
            TaskKind::Nary => "nary",
        })
    }
}

/// Routes an answer by the presence of a `<ref>` tag.
pub fn detect_task(answer: &str) -> TaskKind {
    if answer.contains("<ref>") {
        TaskKind::Binary
    } else {
        TaskKind::Nary
    }
}
