//! Rule-based rewards for relation outputs.
//!
//! A completion earns a format reward (0 or 1) for a clean think/answer
//! envelope, plus a task reward in `[0, 1]` chosen by the `<ref>` gate:
//! `alpha * R + (1 - alpha) * mR` for scene graph captions, and
//! `w * V_e + (1 - w) * V_grnd` for situation frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::IouThreshold;
use crate::metrics::{score_gsr_sample, score_sgg_sample, MetricsError};
use crate::relgram::{
    detect_task, extract_triplets, parse_envelope, parse_scene_graph_caption, parse_situation_frame,
    Diagnostic, DiagnosticKind, Envelope, SituationFrame, TaskKind, Triplet, VerbLexicon,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardConfigError {
    #[error("{name} must lie in [0, 1], got {value}")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("iou_threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight on sample recall in the binary reward.
    pub alpha: f64,
    /// Weight on entity value in the n-ary reward.
    pub nary_weight: f64,
    pub iou_threshold: f64,
    /// When set, a malformed envelope zeroes the total instead of only
    /// losing the format point.
    pub gate_on_format: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            nary_weight: 0.5,
            iou_threshold: 0.5,
            gate_on_format: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        for (name, value) in [("alpha", self.alpha), ("nary_weight", self.nary_weight)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RewardConfigError::WeightOutOfRange { name, value });
            }
        }
        self.threshold().map(|_| ())
    }

    pub fn threshold(&self) -> Result<IouThreshold, RewardConfigError> {
        IouThreshold::from_f64(self.iou_threshold).ok_or(RewardConfigError::BadThreshold(self.iou_threshold))
    }

    fn tau(&self) -> IouThreshold {
        self.threshold().unwrap_or_default()
    }
}

/// Task-typed ground truth for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundTruth {
    Binary(Vec<Triplet>),
    Nary(SituationFrame),
}

impl GroundTruth {
    pub fn task(&self) -> TaskKind {
        match self {
            GroundTruth::Binary(_) => TaskKind::Binary,
            GroundTruth::Nary(_) => TaskKind::Nary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub task: f64,
    pub total: f64,
    /// Task chosen by the gate from the answer text.
    pub task_kind: TaskKind,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn format_reward(env: &Envelope) -> f64 {
    if env.well_formed {
        1.0
    } else {
        0.0
    }
}

pub fn binary_reward(pred: &[Triplet], gt: &[Triplet], cfg: &RewardConfig) -> Result<f64, MetricsError> {
    let s = score_sgg_sample(pred, gt, cfg.tau())?;
    Ok(cfg.alpha * s.recall + (1.0 - cfg.alpha) * s.mean_recall)
}

/// Verb-constrained n-ary reward. Frames whose ground truth has no boxed
/// role get no grounding term, so they top out at `nary_weight`.
pub fn nary_reward(pred: &SituationFrame, gt: &SituationFrame, cfg: &RewardConfig) -> Result<f64, MetricsError> {
    let s = score_gsr_sample(pred, gt, cfg.tau(), true)?;
    Ok(cfg.nary_weight * s.value_fraction() + (1.0 - cfg.nary_weight) * s.grounded_fraction().unwrap_or(0.0))
}

/// Scores one raw completion against its ground truth. Never fails:
/// unparseable or mis-routed answers simply earn 0 on the affected part.
pub fn total_reward(raw: &str, gt: &GroundTruth, cfg: &RewardConfig, lexicon: &VerbLexicon) -> RewardBreakdown {
    let env = parse_envelope(raw);
    let format = format_reward(&env);
    let task_kind = detect_task(&env.answer);
    let mut diagnostics = Vec::new();

    let task = match (task_kind, gt) {
        (TaskKind::Binary, GroundTruth::Binary(gt_triplets)) => {
            let caption = parse_scene_graph_caption(&env.answer);
            diagnostics.extend(caption.diagnostics);
            let triplets = extract_triplets(&caption.value);
            diagnostics.extend(triplets.diagnostics);
            binary_reward(&triplets.value, gt_triplets, cfg).unwrap_or(0.0)
        }
        (TaskKind::Nary, GroundTruth::Nary(gt_frame)) => {
            let frame = parse_situation_frame(&env.answer, lexicon);
            diagnostics.extend(frame.diagnostics);
            nary_reward(&frame.value, gt_frame, cfg).unwrap_or(0.0)
        }
        (detected, gt) => {
            diagnostics.push(Diagnostic::new(
                0,
                DiagnosticKind::TaskMismatch,
                format!("answer routed as {detected} but ground truth is {}", gt.task()),
            ));
            0.0
        }
    };

    let total = if cfg.gate_on_format && format == 0.0 {
        format
    } else {
        format + task
    };
    RewardBreakdown {
        format,
        task,
        total,
        task_kind,
        diagnostics,
    }
}
