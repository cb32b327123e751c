//! Triplet matching, per-sample SGG and GSR scores, and corpus reports.
//!
//! Recall-style scores are kept as fractions in `[0, 1]` per sample; corpus
//! reports are percentages in `[0, 100]`.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::IouThreshold;
use crate::relgram::{SituationFrame, Triplet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("no samples to aggregate")]
    NoSamples,
}

/// Labels equal and both endpoint boxes overlap their counterparts at `tau`.
pub fn compatible(pred: &Triplet, gt: &Triplet, tau: IouThreshold) -> bool {
    pred.subject_label == gt.subject_label
        && pred.predicate == gt.predicate
        && pred.object_label == gt.object_label
        && tau.admits(&pred.subject_box, &gt.subject_box)
        && tau.admits(&pred.object_box, &gt.object_box)
}

/// Kuhn's augmenting-path search restricted to preds `from..` and to gts
/// not in `blocked`.
fn max_matching(adj: &[Vec<usize>], from: usize, blocked: &[bool]) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], blocked: &[bool], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if blocked[v] || seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, blocked, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; blocked.len()];
    let mut size = 0;
    for u in from..adj.len() {
        let mut seen = vec![false; blocked.len()];
        if augment(u, adj, blocked, &mut seen, &mut owner) {
            size += 1;
        }
    }
    size
}

/// Maximum-cardinality one-to-one matching between predicted and
/// ground-truth triplets.
///
/// Among all maximum matchings the lexicographically smallest is returned:
/// pred 0 takes the lowest-indexed gt it can while a maximum matching
/// remains reachable, then pred 1, and so on. Pairs are sorted by pred index.
pub fn match_triplets(pred: &[Triplet], gt: &[Triplet], tau: IouThreshold) -> Vec<(usize, usize)> {
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| (0..gt.len()).filter(|&j| compatible(p, &gt[j], tau)).collect())
        .collect();
    let mut blocked = vec![false; gt.len()];
    let mut remaining = max_matching(&adj, 0, &blocked);
    let mut out = Vec::with_capacity(remaining);
    for i in 0..pred.len() {
        if remaining == 0 {
            break;
        }
        for &j in &adj[i] {
            if blocked[j] {
                continue;
            }
            blocked[j] = true;
            if 1 + max_matching(&adj, i + 1, &blocked) == remaining {
                out.push((i, j));
                remaining -= 1;
                break;
            }
            blocked[j] = false;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateTally {
    pub matched: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySampleScore {
    pub recall: f64,
    pub mean_recall: f64,
    pub per_predicate: BTreeMap<String, PredicateTally>,
}

/// Sample-level triplet recall and per-predicate mean recall. Only
/// predicates present in `gt` enter the mean.
pub fn score_sgg_sample(pred: &[Triplet], gt: &[Triplet], tau: IouThreshold) -> Result<BinarySampleScore, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let matching = match_triplets(pred, gt, tau);
    let mut per_predicate: BTreeMap<String, PredicateTally> = BTreeMap::new();
    for g in gt {
        per_predicate.entry(g.predicate.clone()).or_default().total += 1;
    }
    for &(_, j) in &matching {
        per_predicate.get_mut(&gt[j].predicate).expect("gt predicate tallied").matched += 1;
    }
    let recall = matching.len() as f64 / gt.len() as f64;
    let mean_recall = per_predicate
        .values()
        .map(|t| t.matched as f64 / t.total as f64)
        .sum::<f64>()
        / per_predicate.len() as f64;
    Ok(BinarySampleScore {
        recall,
        mean_recall,
        per_predicate,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleResult {
    pub role: String,
    pub value_ok: bool,
    pub grnd_ok: bool,
    pub gt_grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsrSampleScore {
    pub verb_correct: bool,
    pub role_results: Vec<RoleResult>,
}

impl GsrSampleScore {
    /// Fraction of ground-truth roles whose noun is right (the entity value).
    pub fn value_fraction(&self) -> f64 {
        if self.role_results.is_empty() {
            return 0.0;
        }
        self.role_results.iter().filter(|r| r.value_ok).count() as f64 / self.role_results.len() as f64
    }

    pub fn grounded_roles(&self) -> usize {
        self.role_results.iter().filter(|r| r.gt_grounded).count()
    }

    /// Fraction of grounded ground-truth roles that are also localized;
    /// `None` when no ground-truth role has a box.
    pub fn grounded_fraction(&self) -> Option<f64> {
        let n = self.grounded_roles();
        (n > 0).then(|| self.role_results.iter().filter(|r| r.grnd_ok).count() as f64 / n as f64)
    }

    pub fn all_values_ok(&self) -> bool {
        self.role_results.iter().all(|r| r.value_ok)
    }

    /// `None` for samples whose ground truth has no grounded role.
    pub fn all_grounded_ok(&self) -> Option<bool> {
        (self.grounded_roles() > 0).then(|| {
            self.role_results
                .iter()
                .filter(|r| r.gt_grounded)
                .all(|r| r.grnd_ok)
        })
    }
}

/// Scores one predicted frame against its ground truth. With the verb
/// constraint on, a wrong verb zeroes every role. A role earns grounding
/// credit only if its noun is right, its ground truth is boxed, and the
/// boxes overlap at `tau`. Repeated pred role names keep the first binding.
pub fn score_gsr_sample(
    pred: &SituationFrame,
    gt: &SituationFrame,
    tau: IouThreshold,
    verb_constraint: bool,
) -> Result<GsrSampleScore, MetricsError> {
    if gt.roles.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let verb_correct = pred.verb == gt.verb;
    let mut by_role = HashMap::new();
    for r in &pred.roles {
        by_role.entry(r.role.as_str()).or_insert(r);
    }
    let gate = verb_correct || !verb_constraint;
    let role_results = gt
        .roles
        .iter()
        .map(|g| {
            let hit = by_role.get(g.role.as_str());
            let value_ok = gate && hit.is_some_and(|p| p.entity_label == g.entity_label);
            let gt_grounded = g.is_grounded();
            let grnd_ok = value_ok && gt_grounded && hit.is_some_and(|p| tau.admits(&p.bbox, &g.bbox));
            RoleResult {
                role: g.role.clone(),
                value_ok,
                grnd_ok,
                gt_grounded,
            }
        })
        .collect();
    Ok(GsrSampleScore {
        verb_correct,
        role_results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleScore {
    Binary(BinarySampleScore),
    Nary(GsrSampleScore),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub iou_threshold: f64,
    pub verb_constraint: bool,
    pub pooled_mrecall: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            verb_constraint: true,
            pooled_mrecall: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SggReport {
    pub recall: f64,
    pub mrecall: f64,
    pub mean: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsrReport {
    pub verb: f64,
    pub value: f64,
    pub value_all: f64,
    pub grnd: f64,
    pub grnd_all: f64,
    /// Per-sample mean of the entity value (the reward's `V_e`).
    pub mean_sample_value: f64,
    /// Per-sample mean of the grounded value, 0 for ungrounded samples.
    pub mean_sample_grnd: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub sgg: Option<SggReport>,
    pub gsr: Option<GsrReport>,
    pub sample_count: usize,
    pub options: ReportOptions,
}

/// Running sums behind a [`CorpusReport`]. `merge` is associative and
/// commutative, so shards can be reduced in any order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accumulator {
    sgg_n: usize,
    recall_sum: f64,
    mrecall_sum: f64,
    pooled: BTreeMap<String, PredicateTally>,
    gsr_n: usize,
    verb_ok: usize,
    roles: usize,
    roles_ok: usize,
    value_all_ok: usize,
    grounded_roles: usize,
    grounded_ok: usize,
    grnd_all_n: usize,
    grnd_all_ok: usize,
    sample_value_sum: f64,
    sample_grnd_sum: f64,
}

impl Accumulator {
    pub fn add(&mut self, s: &SampleScore) {
        match s {
            SampleScore::Binary(b) => {
                self.sgg_n += 1;
                self.recall_sum += b.recall;
                self.mrecall_sum += b.mean_recall;
                for (p, t) in &b.per_predicate {
                    let e = self.pooled.entry(p.clone()).or_default();
                    e.matched += t.matched;
                    e.total += t.total;
                }
            }
            SampleScore::Nary(g) => {
                self.gsr_n += 1;
                self.verb_ok += g.verb_correct as usize;
                self.roles += g.role_results.len();
                self.roles_ok += g.role_results.iter().filter(|r| r.value_ok).count();
                self.value_all_ok += g.all_values_ok() as usize;
                self.grounded_roles += g.grounded_roles();
                self.grounded_ok += g.role_results.iter().filter(|r| r.grnd_ok).count();
                if let Some(all) = g.all_grounded_ok() {
                    self.grnd_all_n += 1;
                    self.grnd_all_ok += all as usize;
                }
                self.sample_value_sum += g.value_fraction();
                self.sample_grnd_sum += g.grounded_fraction().unwrap_or(0.0);
            }
        }
    }

    pub fn merge(&mut self, o: &Accumulator) {
        self.sgg_n += o.sgg_n;
        self.recall_sum += o.recall_sum;
        self.mrecall_sum += o.mrecall_sum;
        for (p, t) in &o.pooled {
            let e = self.pooled.entry(p.clone()).or_default();
            e.matched += t.matched;
            e.total += t.total;
        }
        self.gsr_n += o.gsr_n;
        self.verb_ok += o.verb_ok;
        self.roles += o.roles;
        self.roles_ok += o.roles_ok;
        self.value_all_ok += o.value_all_ok;
        self.grounded_roles += o.grounded_roles;
        self.grounded_ok += o.grounded_ok;
        self.grnd_all_n += o.grnd_all_n;
        self.grnd_all_ok += o.grnd_all_ok;
        self.sample_value_sum += o.sample_value_sum;
        self.sample_grnd_sum += o.sample_grnd_sum;
    }

    pub fn report(&self, options: ReportOptions) -> Result<CorpusReport, MetricsError> {
        if self.sgg_n + self.gsr_n == 0 {
            return Err(MetricsError::NoSamples);
        }
        let pct = |num: f64, den: usize| if den == 0 { 0.0 } else { 100.0 * num / den as f64 };
        let sgg = (self.sgg_n > 0).then(|| {
            let recall = pct(self.recall_sum, self.sgg_n);
            let mrecall = if options.pooled_mrecall {
                pct(
                    self.pooled
                        .values()
                        .map(|t| t.matched as f64 / t.total as f64)
                        .sum(),
                    self.pooled.len(),
                )
            } else {
                pct(self.mrecall_sum, self.sgg_n)
            };
            SggReport {
                recall,
                mrecall,
                mean: (recall + mrecall) / 2.0,
                samples: self.sgg_n,
            }
        });
        let gsr = (self.gsr_n > 0).then(|| GsrReport {
            verb: pct(self.verb_ok as f64, self.gsr_n),
            value: pct(self.roles_ok as f64, self.roles),
            value_all: pct(self.value_all_ok as f64, self.gsr_n),
            grnd: pct(self.grounded_ok as f64, self.grounded_roles),
            grnd_all: pct(self.grnd_all_ok as f64, self.grnd_all_n),
            mean_sample_value: pct(self.sample_value_sum, self.gsr_n),
            mean_sample_grnd: pct(self.sample_grnd_sum, self.gsr_n),
            samples: self.gsr_n,
        });
        Ok(CorpusReport {
            sgg,
            gsr,
            sample_count: self.sgg_n + self.gsr_n,
            options,
        })
    }
}

pub fn aggregate<'a, I>(samples: I, options: ReportOptions) -> Result<CorpusReport, MetricsError>
where
    I: IntoIterator<Item = &'a SampleScore>,
{
    let mut acc = Accumulator::default();
    for s in samples {
        acc.add(s);
    }
    acc.report(options)
}

impl CorpusReport {
    /// Aligned text tables with two-decimal percentages.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.sgg {
            out.push_str(&format!("{:>10} {:>10} {:>10}\n", "Recall", "mRecall", "Mean"));
            out.push_str(&format!("{:>10.2} {:>10.2} {:>10.2}\n", s.recall, s.mrecall, s.mean));
        }
        if let Some(g) = &self.gsr {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!(
                "{:>10} {:>10} {:>10} {:>10} {:>10}\n",
                "Verb", "Value", "Value-all", "Grnd", "Grnd-all"
            ));
            out.push_str(&format!(
                "{:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>10.2}\n",
                g.verb, g.value, g.value_all, g.grnd, g.grnd_all
            ));
        }
        let on_off = |b: bool| if b { "on" } else { "off" };
        let mut footer = format!("samples: {}  iou: {}", self.sample_count, self.options.iou_threshold);
        if self.sgg.is_some() {
            footer.push_str(&format!("  pooled mrecall: {}", on_off(self.options.pooled_mrecall)));
        }
        if self.gsr.is_some() {
            footer.push_str(&format!("  verb constraint: {}", on_off(self.options.verb_constraint)));
        }
        out.push_str(&footer);
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BoundingBox;
    use crate::relgram::RoleBinding;

    fn bb(x1: i64, y1: i64, x2: i64, y2: i64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn t(s: &str, sb: BoundingBox, p: &str, o: &str, ob: BoundingBox) -> Triplet {
        Triplet {
            subject_label: s.into(),
            subject_box: sb,
            predicate: p.into(),
            object_label: o.into(),
            object_box: ob,
        }
    }

    fn role(r: &str, l: &str, b: BoundingBox) -> RoleBinding {
        RoleBinding { role: r.into(), entity_label: l.into(), bbox: b }
    }

    const TAU: IouThreshold = IouThreshold::HALF;

    #[test]
    fn identity_match() {
        let g = vec![t("person", bb(0, 0, 10, 10), "on", "bench", bb(0, 10, 10, 20))];
        assert_eq!(match_triplets(&g, &g, TAU), vec![(0, 0)]);
    }

    #[test]
    fn low_iou_subject_fails() {
        let g = vec![t("person", bb(0, 0, 10, 10), "on", "bench", bb(0, 10, 10, 20))];
        // intersection 40, union 100
        let p = vec![t("person", bb(0, 0, 10, 7), "on", "bench", bb(0, 10, 10, 20))];
        assert!((crate::geom::iou(&p[0].subject_box, &g[0].subject_box) - 0.7).abs() < 1e-12);
        let p = vec![t("person", bb(6, 0, 16, 10), "on", "bench", bb(0, 10, 10, 20))];
        assert!(crate::geom::iou(&p[0].subject_box, &g[0].subject_box) < 0.5);
        assert!(match_triplets(&p, &g, TAU).is_empty());
    }

    #[test]
    fn maximum_not_greedy() {
        // pred 0 fits both gts, pred 1 only gt 0; greedy would stop at one pair
        let a = bb(0, 0, 10, 10);
        let c = bb(0, 0, 10, 6);
        let d = bb(0, 0, 10, 14);
        let g = vec![t("x", a, "on", "y", a), t("x", c, "on", "y", c)];
        let p = vec![t("x", a, "on", "y", a), t("x", d, "on", "y", d)];
        assert!(!compatible(&p[1], &g[1], TAU));
        assert_eq!(match_triplets(&p, &g, TAU), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn sgg_fixture() {
        let on = t("person", bb(0, 0, 10, 10), "on", "bench", bb(0, 10, 10, 20));
        let beside = t("dog", bb(20, 0, 30, 10), "beside", "bench", bb(0, 10, 10, 20));
        let s = score_sgg_sample(&[on.clone()], &[on.clone(), beside.clone()], TAU).unwrap();
        assert_eq!(s.recall, 0.5);
        assert_eq!(s.mean_recall, 0.5);
        assert_eq!(s.per_predicate["on"], PredicateTally { matched: 1, total: 1 });

        let full = score_sgg_sample(&[on.clone(), beside.clone()], &[on.clone(), beside.clone()], TAU).unwrap();
        assert_eq!((full.recall, full.mean_recall), (1.0, 1.0));
        let none = score_sgg_sample(&[], &[on.clone()], TAU).unwrap();
        assert_eq!((none.recall, none.mean_recall), (0.0, 0.0));
        assert_eq!(score_sgg_sample(&[on], &[], TAU), Err(MetricsError::EmptyGroundTruth));
    }

    #[test]
    fn mean_recall_weights_predicates_equally() {
        let a = t("a", bb(0, 0, 10, 10), "on", "b", bb(0, 0, 10, 10));
        let a2 = t("c", bb(0, 0, 10, 10), "on", "b", bb(0, 0, 10, 10));
        let n = t("a", bb(0, 0, 10, 10), "near", "b", bb(0, 0, 10, 10));
        let s = score_sgg_sample(&[n.clone()], &[a, a2, n], TAU).unwrap();
        assert!((s.recall - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.mean_recall, 0.5);
    }

    pub(crate) fn gsr_fixture() -> (SituationFrame, SituationFrame) {
        let gt = SituationFrame {
            verb: "drinking".into(),
            raw_text: String::new(),
            roles: vec![
                role("agent", "child", bb(0, 0, 10, 10)),
                role("liquid", "milk", bb(20, 20, 30, 30)),
                role("container", "glass", bb(40, 40, 50, 50)),
            ],
        };
        let pred = SituationFrame {
            verb: "drinking".into(),
            raw_text: String::new(),
            roles: vec![
                // intersection 60, union 100
                role("agent", "child", bb(0, 0, 10, 6)),
                role("liquid", "water", bb(20, 20, 30, 30)),
                // intersection 30, union 100
                role("container", "glass", bb(40, 40, 50, 43)),
            ],
        };
        (pred, gt)
    }

    #[test]
    fn gsr_fixture_scores() {
        let (pred, gt) = gsr_fixture();
        assert!((crate::geom::iou(&pred.roles[0].bbox, &gt.roles[0].bbox) - 0.6).abs() < 1e-12);
        assert!((crate::geom::iou(&pred.roles[2].bbox, &gt.roles[2].bbox) - 0.3).abs() < 1e-12);
        let s = score_gsr_sample(&pred, &gt, TAU, true).unwrap();
        assert!(s.verb_correct);
        assert_eq!(s.value_fraction(), 2.0 / 3.0);
        assert_eq!(s.grounded_fraction(), Some(1.0 / 3.0));
    }

    #[test]
    fn gsr_identity_and_wrong_verb() {
        let (_, gt) = gsr_fixture();
        let s = score_gsr_sample(&gt, &gt, TAU, true).unwrap();
        assert_eq!((s.value_fraction(), s.grounded_fraction()), (1.0, Some(1.0)));
        assert!(s.all_values_ok() && s.all_grounded_ok() == Some(true));

        let mut wrong = gt.clone();
        wrong.verb = "pouring".into();
        let s = score_gsr_sample(&wrong, &gt, TAU, true).unwrap();
        assert_eq!((s.value_fraction(), s.grounded_fraction()), (0.0, Some(0.0)));
        let s = score_gsr_sample(&wrong, &gt, TAU, false).unwrap();
        assert_eq!(s.value_fraction(), 1.0);
        assert!(!s.verb_correct);
    }

    #[test]
    fn duplicate_pred_roles_first_wins() {
        let (_, gt) = gsr_fixture();
        let mut pred = gt.clone();
        pred.roles.insert(0, role("agent", "man", bb(0, 0, 10, 10)));
        let s = score_gsr_sample(&pred, &gt, TAU, true).unwrap();
        assert!(!s.role_results[0].value_ok);
    }

    #[test]
    fn aggregation_examples() {
        let mk = |r: f64| SampleScore::Binary(BinarySampleScore { recall: r, mean_recall: r, per_predicate: BTreeMap::new() });
        let rep = aggregate(&[mk(1.0), mk(0.0)], ReportOptions::default()).unwrap();
        let sgg = rep.sgg.unwrap();
        assert_eq!(sgg.recall, 50.0);
        assert_eq!(sgg.mean, 50.0);
        assert_eq!(aggregate(&[], ReportOptions::default()), Err(MetricsError::NoSamples));
    }

    #[test]
    fn sentinel_roles_leave_grounding_denominators() {
        let gt = SituationFrame {
            verb: "riding".into(),
            raw_text: String::new(),
            roles: vec![
                role("agent", "man", bb(0, 0, 10, 10)),
                role("vehicle", "horse", bb(0, 10, 20, 30)),
                role("place", "field", BoundingBox::SENTINEL),
            ],
        };
        let s = score_gsr_sample(&gt, &gt, TAU, true).unwrap();
        assert_eq!(s.grounded_fraction(), Some(1.0));
        let rep = aggregate(&[SampleScore::Nary(s)], ReportOptions::default()).unwrap();
        let g = rep.gsr.unwrap();
        assert_eq!(g.grnd, 100.0);
        assert_eq!(g.grnd_all, 100.0);

        let only_sentinel = SituationFrame {
            verb: "riding".into(),
            raw_text: String::new(),
            roles: vec![role("place", "field", BoundingBox::SENTINEL)],
        };
        let s = score_gsr_sample(&only_sentinel, &only_sentinel, TAU, true).unwrap();
        assert_eq!(s.all_grounded_ok(), None);
    }

    #[test]
    fn merge_equals_sequential_add() {
        let (pred, gt) = gsr_fixture();
        let a = SampleScore::Nary(score_gsr_sample(&pred, &gt, TAU, true).unwrap());
        let b = SampleScore::Nary(score_gsr_sample(&gt, &gt, TAU, true).unwrap());
        let mut seq = Accumulator::default();
        seq.add(&a);
        seq.add(&b);
        let (mut x, mut y) = (Accumulator::default(), Accumulator::default());
        y.add(&b);
        x.add(&a);
        y.merge(&x);
        assert_eq!(seq.report(ReportOptions::default()), y.report(ReportOptions::default()));
    }
}
