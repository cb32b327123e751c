//! JSON Lines records and batch scoring over whole corpora.
//!
//! Ground-truth records carry their payload in the serialized grammars:
//!
//! ```text
//! {"image_id": "a", "task": "binary", "caption": "<ref>dog</ref><box>[[..]]</box> ..."}
//! {"image_id": "b", "task": "binary", "triplets": "[[\"dog\", [..], \"bench\", [..], \"on\"]]"}
//! {"image_id": "c", "task": "nary", "verb": "drinking", "frame": "drinking <agent>man</agent><box>[..]</box> ..."}
//! ```
//!
//! Predictions are `{"image_id": .., "output_text": ..}`. Ids may be strings
//! or integers; integers are read as their decimal text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geom::IouThreshold;
use crate::metrics::{
    score_gsr_sample, score_sgg_sample, Accumulator, CorpusReport, MetricsError, ReportOptions, SampleScore,
};
use crate::relgram::{
    extract_triplets, parse_envelope, parse_scene_graph_caption, parse_scene_graph_list, parse_situation_frame,
    Diagnostic, Parsed, SituationFrame, TaskKind, Triplet, VerbLexicon,
};
use crate::reward::{total_reward, GroundTruth, RewardBreakdown, RewardConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate image_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("no ground truth for image_id {0:?}")]
    MissingGroundTruth(String),
    #[error("ground truth {image_id:?} is invalid: {reason}")]
    InvalidGroundTruth { image_id: String, reason: String },
    #[error("image_id {image_id:?} has {found} ground truth, expected {expected}")]
    WrongTask {
        image_id: String,
        expected: TaskKind,
        found: TaskKind,
    },
    #[error("iou threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn id_string<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Text(String),
        Int(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::Text(s) => s,
        Id::Int(i) => i.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(deserialize_with = "id_string")]
    pub image_id: String,
    pub output_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    #[serde(deserialize_with = "id_string")]
    pub image_id: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triplets: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

fn render_diags(ds: &[Diagnostic]) -> String {
    ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

impl GroundTruthRecord {
    pub fn binary_caption(image_id: impl Into<String>, caption: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            task: TaskKind::Binary,
            caption: Some(caption.into()),
            triplets: None,
            verb: None,
            frame: None,
        }
    }

    pub fn binary_list(image_id: impl Into<String>, triplets: impl Into<String>) -> Self {
        Self {
            triplets: Some(triplets.into()),
            caption: None,
            ..Self::binary_caption(image_id, "")
        }
    }

    pub fn nary(image_id: impl Into<String>, verb: impl Into<String>, frame: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            task: TaskKind::Nary,
            caption: None,
            triplets: None,
            verb: Some(verb.into()),
            frame: Some(frame.into()),
        }
    }

    /// Parses the payload. Ground truth must be clean: any diagnostic is an
    /// error. An explicit `verb` is added to `lexicon` for this record.
    pub fn resolve(&self, lexicon: &VerbLexicon) -> Result<GroundTruth, CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidGroundTruth {
            image_id: self.image_id.clone(),
            reason,
        };
        let clean = |p: &[Diagnostic]| if p.is_empty() { Ok(()) } else { Err(invalid(render_diags(p))) };
        match self.task {
            TaskKind::Binary => match (&self.caption, &self.triplets) {
                (Some(c), None) => {
                    let cap = parse_scene_graph_caption(c);
                    clean(&cap.diagnostics)?;
                    let ts = extract_triplets(&cap.value);
                    clean(&ts.diagnostics)?;
                    non_empty(ts.value).ok_or_else(|| invalid("no triplets".into())).map(GroundTruth::Binary)
                }
                (None, Some(t)) => {
                    let ts = parse_scene_graph_list(t);
                    clean(&ts.diagnostics)?;
                    non_empty(ts.value).ok_or_else(|| invalid("no triplets".into())).map(GroundTruth::Binary)
                }
                _ => Err(invalid("binary records need exactly one of caption or triplets".into())),
            },
            TaskKind::Nary => {
                let frame = self.frame.as_ref().ok_or_else(|| invalid("nary records need a frame".into()))?;
                let mut lex = lexicon.clone();
                if let Some(v) = &self.verb {
                    lex.insert(v, v);
                }
                let f = parse_situation_frame(frame, &lex);
                clean(&f.diagnostics)?;
                if f.value.roles.is_empty() {
                    return Err(invalid("frame has no roles".into()));
                }
                Ok(GroundTruth::Nary(f.value))
            }
        }
    }
}

fn non_empty(v: Vec<Triplet>) -> Option<Vec<Triplet>> {
    (!v.is_empty()).then_some(v)
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, CorpusError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| CorpusError::Json { line: i + 1, source }))
        .collect()
}

pub fn read_predictions(text: &str) -> Result<Vec<PredictionRecord>, CorpusError> {
    let recs: Vec<PredictionRecord> = read_jsonl(text)?;
    let mut seen = BTreeSet::new();
    for (i, r) in recs.iter().enumerate() {
        if !seen.insert(r.image_id.as_str()) {
            return Err(CorpusError::DuplicateId {
                line: i + 1,
                id: r.image_id.clone(),
            });
        }
    }
    Ok(recs)
}

/// Parsed ground truth keyed by image id, with the verb lexicon used to
/// read predicted frames.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthSet {
    pub items: BTreeMap<String, GroundTruth>,
    pub lexicon: VerbLexicon,
}

impl GroundTruthSet {
    /// Builds the set from records. The lexicon is `base` plus every verb
    /// class named in the records, with its inflections.
    pub fn from_records(records: &[GroundTruthRecord], base: &VerbLexicon) -> Result<Self, CorpusError> {
        let mut lexicon = base.clone();
        lexicon.extend(&VerbLexicon::from_verbs(records.iter().filter_map(|r| r.verb.as_deref())));
        let mut items = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let gt = r.resolve(&lexicon)?;
            if items.insert(r.image_id.clone(), gt).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: r.image_id.clone(),
                });
            }
        }
        Ok(Self { items, lexicon })
    }

    pub fn parse(text: &str, base: &VerbLexicon) -> Result<Self, CorpusError> {
        Self::from_records(&read_jsonl::<GroundTruthRecord>(text)?, base)
    }

    pub fn get(&self, id: &str) -> Result<&GroundTruth, CorpusError> {
        self.items.get(id).ok_or_else(|| CorpusError::MissingGroundTruth(id.to_string()))
    }

    fn get_task(&self, id: &str, expected: TaskKind) -> Result<&GroundTruth, CorpusError> {
        let gt = self.get(id)?;
        if gt.task() != expected {
            return Err(CorpusError::WrongTask {
                image_id: id.to_string(),
                expected,
                found: gt.task(),
            });
        }
        Ok(gt)
    }
}

/// How eval-sgg reads answers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerFormat {
    #[default]
    Caption,
    List,
}

impl std::str::FromStr for AnswerFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "caption" => Ok(Self::Caption),
            "list" => Ok(Self::List),
            _ => Err(format!("unknown answer format {s:?} (expected caption or list)")),
        }
    }
}

/// Predicted triplets from a raw completion. Malformed envelopes fall back
/// to the best-effort answer text.
pub fn predicted_triplets(output_text: &str, format: AnswerFormat) -> Parsed<Vec<Triplet>> {
    let env = parse_envelope(output_text);
    match format {
        AnswerFormat::Caption => {
            let cap = parse_scene_graph_caption(&env.answer);
            let mut ts = extract_triplets(&cap.value);
            let mut diagnostics = cap.diagnostics;
            diagnostics.append(&mut ts.diagnostics);
            Parsed {
                value: ts.value,
                diagnostics,
            }
        }
        AnswerFormat::List => parse_scene_graph_list(&env.answer),
    }
}

pub fn predicted_frame(output_text: &str, lexicon: &VerbLexicon) -> Parsed<SituationFrame> {
    parse_situation_frame(&parse_envelope(output_text).answer, lexicon)
}

/// Order-preserving parallel map over scoped threads.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    if workers < 2 || items.len() < 64 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<U>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scoring thread panicked"))
            .collect()
    })
}

/// Corpus report plus bookkeeping about the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report: CorpusReport,
    pub records: usize,
    /// Predictions whose envelope was not well formed.
    pub malformed_envelopes: usize,
    /// Predictions whose answer produced at least one diagnostic; they are
    /// scored on whatever parsed, which may be nothing.
    pub parse_failures: usize,
    /// Ground-truth records of this task with no prediction; not scored.
    pub unpredicted: usize,
}

fn tau(options: &ReportOptions) -> Result<IouThreshold, CorpusError> {
    IouThreshold::from_f64(options.iou_threshold).ok_or(CorpusError::BadThreshold(options.iou_threshold))
}

struct Scored {
    score: SampleScore,
    malformed: bool,
    failed: bool,
}

fn finish(
    scored: Vec<Result<Scored, CorpusError>>,
    options: ReportOptions,
    preds: &[PredictionRecord],
    gts: &GroundTruthSet,
    task: TaskKind,
) -> Result<EvalReport, CorpusError> {
    let mut acc = Accumulator::default();
    let (mut malformed, mut failures) = (0, 0);
    for s in scored {
        let s = s?;
        acc.add(&s.score);
        malformed += usize::from(s.malformed);
        failures += usize::from(s.failed);
    }
    let predicted: BTreeSet<&str> = preds.iter().map(|p| p.image_id.as_str()).collect();
    let unpredicted = gts
        .items
        .iter()
        .filter(|(id, gt)| gt.task() == task && !predicted.contains(id.as_str()))
        .count();
    Ok(EvalReport {
        report: acc.report(options)?,
        records: preds.len(),
        malformed_envelopes: malformed,
        parse_failures: failures,
        unpredicted,
    })
}

pub fn eval_sgg(
    preds: &[PredictionRecord],
    gts: &GroundTruthSet,
    format: AnswerFormat,
    options: ReportOptions,
) -> Result<EvalReport, CorpusError> {
    let tau = tau(&options)?;
    let scored = par_map(preds, |p| -> Result<_, CorpusError> {
        let GroundTruth::Binary(gt) = gts.get_task(&p.image_id, TaskKind::Binary)? else {
            unreachable!("task checked")
        };
        let pred = predicted_triplets(&p.output_text, format);
        Ok(Scored {
            score: SampleScore::Binary(score_sgg_sample(&pred.value, gt, tau)?),
            malformed: !parse_envelope(&p.output_text).well_formed,
            failed: !pred.is_clean(),
        })
    });
    finish(scored, options, preds, gts, TaskKind::Binary)
}

pub fn eval_gsr(preds: &[PredictionRecord], gts: &GroundTruthSet, options: ReportOptions) -> Result<EvalReport, CorpusError> {
    let tau = tau(&options)?;
    let scored = par_map(preds, |p| -> Result<_, CorpusError> {
        let GroundTruth::Nary(gt) = gts.get_task(&p.image_id, TaskKind::Nary)? else {
            unreachable!("task checked")
        };
        let pred = predicted_frame(&p.output_text, &gts.lexicon);
        Ok(Scored {
            score: SampleScore::Nary(score_gsr_sample(&pred.value, gt, tau, options.verb_constraint)?),
            malformed: !parse_envelope(&p.output_text).well_formed,
            failed: !pred.is_clean(),
        })
    });
    finish(scored, options, preds, gts, TaskKind::Nary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub image_id: String,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub count: usize,
    pub mean_total: f64,
    pub mean_format: f64,
    pub mean_task: f64,
}

impl RewardStats {
    fn of<'a>(it: impl Iterator<Item = &'a RewardBreakdown>) -> Self {
        let mut s = Self::default();
        for b in it {
            s.count += 1;
            s.mean_total += b.total;
            s.mean_format += b.format;
            s.mean_task += b.task;
        }
        if s.count > 0 {
            let n = s.count as f64;
            s.mean_total /= n;
            s.mean_format /= n;
            s.mean_task /= n;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSummary {
    pub overall: RewardStats,
    /// Partitioned by the task the gate chose for each answer.
    pub by_task: BTreeMap<TaskKind, RewardStats>,
    pub mismatched: usize,
}

/// Scores every prediction, in input order.
pub fn score_rewards(
    preds: &[PredictionRecord],
    gts: &GroundTruthSet,
    cfg: &RewardConfig,
) -> Result<Vec<RewardRecord>, CorpusError> {
    par_map(preds, |p| {
        let gt = gts.get(&p.image_id)?;
        Ok(RewardRecord {
            image_id: p.image_id.clone(),
            breakdown: total_reward(&p.output_text, gt, cfg, &gts.lexicon),
        })
    })
    .into_iter()
    .collect()
}

pub fn summarize_rewards(records: &[RewardRecord], gts: &GroundTruthSet) -> RewardSummary {
    let by_task = [TaskKind::Binary, TaskKind::Nary]
        .into_iter()
        .filter_map(|k| {
            let s = RewardStats::of(records.iter().map(|r| &r.breakdown).filter(|b| b.task_kind == k));
            (s.count > 0).then_some((k, s))
        })
        .collect();
    let mismatched = records
        .iter()
        .filter(|r| gts.items.get(&r.image_id).is_some_and(|g| g.task() != r.breakdown.task_kind))
        .count();
    RewardSummary {
        overall: RewardStats::of(records.iter().map(|r| &r.breakdown)),
        by_task,
        mismatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relgram::wrap_envelope;

    const CAP: &str = "<ref>dog</ref><box>[[0,0,10,10]]</box> <ref>bench</ref><box>[[20,0,40,10]]</box> \
                       <pred>on</pred><box>[[0,0,10,10]]</box><box>[[20,0,40,10]]</box>";
    const FRAME: &str = "drinking <agent>man</agent><box>[0,0,10,10]</box> <liquid>milk</liquid><box>[-1,-1,-1,-1]</box>";

    fn gts() -> GroundTruthSet {
        let text = [
            serde_json::to_string(&GroundTruthRecord::binary_caption("a", CAP)).unwrap(),
            r#"{"image_id": 7, "task": "binary", "triplets": "[[\"dog\", [0,0,10,10], \"bench\", [20,0,40,10], \"on\"]]"}"#.into(),
            serde_json::to_string(&GroundTruthRecord::nary("c", "drinking", FRAME)).unwrap(),
        ]
        .join("\n");
        GroundTruthSet::parse(&text, &VerbLexicon::default()).unwrap()
    }

    fn pred(id: &str, answer: &str) -> PredictionRecord {
        PredictionRecord {
            image_id: id.into(),
            output_text: wrap_envelope("t", answer),
        }
    }

    #[test]
    fn caption_and_list_ground_truth_agree() {
        let g = gts();
        assert_eq!(g.get("a").unwrap(), g.get("7").unwrap());
    }

    #[test]
    fn dirty_ground_truth_is_rejected() {
        let r = GroundTruthRecord::binary_caption("x", "<ref>dog</ref>");
        assert!(matches!(r.resolve(&VerbLexicon::default()), Err(CorpusError::InvalidGroundTruth { .. })));
        let r = GroundTruthRecord::nary("x", "drinking", "<agent>man</agent><box>[0,0,1,1]</box>");
        assert!(r.resolve(&VerbLexicon::default()).is_err());
    }

    #[test]
    fn identity_corpus_is_perfect() {
        let g = gts();
        let preds = vec![pred("a", CAP), pred("c", FRAME)];
        let sgg = eval_sgg(&preds[..1], &g, AnswerFormat::Caption, ReportOptions::default()).unwrap();
        let s = sgg.report.sgg.unwrap();
        assert_eq!((s.recall, s.mrecall), (100.0, 100.0));
        assert_eq!(sgg.unpredicted, 1);
        let gsr = eval_gsr(&preds[1..], &g, ReportOptions::default()).unwrap();
        let r = gsr.report.gsr.unwrap();
        assert_eq!((r.verb, r.value, r.grnd), (100.0, 100.0, 100.0));
        let rec = score_rewards(&preds, &g, &RewardConfig::default()).unwrap();
        let sum = summarize_rewards(&rec, &g);
        assert_eq!(sum.overall.mean_total, 2.0);
        assert_eq!(sum.by_task.len(), 2);
    }

    #[test]
    fn missing_and_wrong_task() {
        let g = gts();
        let e = eval_sgg(&[pred("zzz", "")], &g, AnswerFormat::Caption, ReportOptions::default());
        assert!(matches!(e, Err(CorpusError::MissingGroundTruth(_))));
        let e = eval_gsr(&[pred("a", "")], &g, ReportOptions::default());
        assert!(matches!(e, Err(CorpusError::WrongTask { .. })));
    }

    #[test]
    fn garbage_scores_zero_and_is_counted() {
        let g = gts();
        let preds = vec![PredictionRecord {
            image_id: "a".into(),
            output_text: "<ref>dog".into(),
        }];
        let r = eval_sgg(&preds, &g, AnswerFormat::Caption, ReportOptions::default()).unwrap();
        assert_eq!(r.report.sgg.unwrap().recall, 0.0);
        assert_eq!((r.malformed_envelopes, r.parse_failures), (1, 1));
    }

    #[test]
    fn parallel_scoring_keeps_order() {
        let g = gts();
        let preds: Vec<_> = (0..300)
            .map(|i| pred(["a", "7", "c"][i % 3], if i % 2 == 0 { CAP } else { FRAME }))
            .collect();
        let rec = score_rewards(&preds, &g, &RewardConfig::default()).unwrap();
        for (p, r) in preds.iter().zip(&rec) {
            assert_eq!(p.image_id, r.image_id);
            let gt = g.get(&p.image_id).unwrap();
            assert_eq!(r.breakdown, total_reward(&p.output_text, gt, &RewardConfig::default(), &g.lexicon));
        }
    }

    #[test]
    fn duplicate_prediction_ids() {
        let text = "{\"image_id\":\"a\",\"output_text\":\"\"}\n\n{\"image_id\":\"a\",\"output_text\":\"x\"}";
        assert!(matches!(read_predictions(text), Err(CorpusError::DuplicateId { .. })));
    }
}
