//! Parsing, scoring and policy-optimization toolkit for grounded visual
//! relation outputs.
//!
//! * [`geom`]: integer boxes and exact IoU.
//! * [`relgram`]: caption, list and frame grammars, prompts.
//! * [`metrics`]: triplet matching, SGG and GSR scores, corpus reports.
//! * [`reward`]: format and task rewards with the `<ref>` gate.
//! * [`grpo`]: advantages, clipped surrogate, KL penalty, objective.
//! * [`sim`]: toy worlds and a choice policy trained with GRPO.
//! * [`corpus`]: JSON Lines records, configuration, batch evaluation.

pub mod corpus;
pub mod geom;
pub mod grpo;
pub mod metrics;
pub mod relgram;
pub mod reward;
pub mod sim;

pub use geom::{iou, BoundingBox, IouThreshold};
pub use relgram::{SituationFrame, TaskKind, Triplet};
