use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const PLACEHOLDER: &str = "{ground_truth}";

const SGG_CAPTION_COT: &str = include_str!("../../assets/prompts/sgg_caption_cot.txt");
const GSR_COT: &str = include_str!("../../assets/prompts/gsr_cot.txt");
const SGG_LIST_TASK: &str = include_str!("../../assets/prompts/sgg_list_task.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown prompt kind {0:?} (expected sgg-caption-cot, gsr-cot or sgg-list-task)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    /// CoT generation prompt for scene graph captions.
    SggCaptionCot,
    /// CoT generation prompt for grounded situation frames.
    GsrCot,
    /// Training prompt for the structured-list scene graph format.
    SggListTask,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::SggCaptionCot, PromptKind::GsrCot, PromptKind::SggListTask];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::SggCaptionCot => "sgg-caption-cot",
            PromptKind::GsrCot => "gsr-cot",
            PromptKind::SggListTask => "sgg-list-task",
        }
    }

    pub fn template(&self) -> &'static str {
        match self {
            PromptKind::SggCaptionCot => SGG_CAPTION_COT,
            PromptKind::GsrCot => GSR_COT,
            PromptKind::SggListTask => SGG_LIST_TASK,
        }
    }

    pub fn takes_ground_truth(&self) -> bool {
        self.template().contains(PLACEHOLDER)
    }
}

impl FromStr for PromptKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PromptError::UnknownKind(s.to_string()))
    }
}

/// Substitutes `ground_truth` into the template for `kind`. The list-task
/// prompt has no placeholder, so its ground truth is ignored.
pub fn render_prompt(kind: PromptKind, ground_truth: &str) -> String {
    kind.template().replacen(PLACEHOLDER, ground_truth, 1)
}
