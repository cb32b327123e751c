//! Seeded toy relation worlds and a categorical choice policy trained with
//! GRPO against the rule-based rewards.
//!
//! The policy "perceives" each world through noisy categorical choices: for
//! every ground-truth relation (or role) it picks labels conditioned on the
//! true label, a box offset per coordinate, and for binary worlds whether to
//! mention the relation at all. Each choice is one unit in the log-prob
//! sequences handed to [`crate::grpo`], which makes the objective's gradient
//! with respect to the logits exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::BoundingBox;
use crate::grpo::{self, GrpoConfig, GrpoError, ResponseSample, RolloutGroup, TokenLogProbs};
use crate::relgram::{
    binary_cot, extract_triplets, nary_cot, serialize_caption, serialize_frame, wrap_envelope, EntityMention,
    PredicateMention, RoleBinding, SceneGraphCaption, SituationFrame, TaskKind, Triplet, VerbLexicon,
};
use crate::reward::{total_reward, GroundTruth, RewardConfig};

pub const OBJECTS: [&str; 8] = ["person", "bench", "dog", "table", "cup", "tree", "car", "bicycle"];
pub const PREDICATES: [&str; 6] = ["on", "beside", "holding", "in front of", "riding", "looking at"];
pub const NOUNS: [&str; 12] = [
    "man", "woman", "child", "milk", "glass", "horse", "bread", "knife", "dog", "street", "kitchen", "field",
];
/// Verb classes with their role inventories; the agent always comes first.
pub const VERBS: [(&str, &[&str]); 5] = [
    ("drinking", &["agent", "liquid", "container", "place"]),
    ("riding", &["agent", "vehicle", "field", "place"]),
    ("cutting", &["agent", "item", "tool", "place"]),
    ("carrying", &["agent", "item", "destination", "place"]),
    ("feeding", &["agent", "food", "eater", "place"]),
];
pub const JITTER_OFFSETS: [i64; 5] = [-8, -4, 0, 4, 8];
pub const GRID: i64 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("invalid sim config: {0}")]
    Config(String),
}

/// splitmix64 finalizer; derives independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(seed) ^ a) ^ b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldEntity {
    pub label: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldRelation {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldRole {
    pub role: String,
    pub noun: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorldContent {
    Binary {
        entities: Vec<WorldEntity>,
        relations: Vec<WorldRelation>,
    },
    Nary {
        verb: usize,
        roles: Vec<WorldRole>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyWorld {
    pub world_id: u64,
    pub content: WorldContent,
}

impl ToyWorld {
    pub fn task(&self) -> TaskKind {
        match self.content {
            WorldContent::Binary { .. } => TaskKind::Binary,
            WorldContent::Nary { .. } => TaskKind::Nary,
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        match &self.content {
            WorldContent::Binary { entities, relations } => GroundTruth::Binary(
                relations
                    .iter()
                    .map(|r| Triplet {
                        subject_label: OBJECTS[entities[r.subject].label].to_string(),
                        subject_box: entities[r.subject].bbox,
                        predicate: PREDICATES[r.predicate].to_string(),
                        object_label: OBJECTS[entities[r.object].label].to_string(),
                        object_box: entities[r.object].bbox,
                    })
                    .collect(),
            ),
            WorldContent::Nary { verb, roles } => GroundTruth::Nary(SituationFrame {
                verb: VERBS[*verb].0.to_string(),
                raw_text: String::new(),
                roles: roles
                    .iter()
                    .map(|r| RoleBinding {
                        role: r.role.clone(),
                        entity_label: NOUNS[r.noun].to_string(),
                        bbox: r.bbox,
                    })
                    .collect(),
            }),
        }
    }

    /// Caption form of a binary world's ground truth.
    pub fn ground_truth_caption(&self) -> Option<SceneGraphCaption> {
        let WorldContent::Binary { entities, relations } = &self.content else {
            return None;
        };
        Some(SceneGraphCaption {
            raw_text: String::new(),
            entities: entities
                .iter()
                .map(|e| EntityMention {
                    label: OBJECTS[e.label].to_string(),
                    boxes: vec![e.bbox],
                })
                .collect(),
            predicates: relations
                .iter()
                .map(|r| PredicateMention {
                    predicate: PREDICATES[r.predicate].to_string(),
                    subject_boxes: vec![entities[r.subject].bbox],
                    object_boxes: vec![entities[r.object].bbox],
                })
                .collect(),
        })
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = 4 * rng.random_range(4..=8);
    let h = 4 * rng.random_range(4..=8);
    let x1 = 4 * rng.random_range(0..=(GRID - w) / 4);
    let y1 = 4 * rng.random_range(0..=(GRID - h) / 4);
    BoundingBox::new(x1, y1, x1 + w, y1 + h).expect("grid box is valid")
}

fn distinct_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let i = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}

/// Deterministic world for `seed`. Binary worlds hold 2–4 entities with
/// distinct labels and boxes, and 1–3 relations over distinct ordered
/// pairs. N-ary worlds hold one verb and 2–4 roles, at most one of them
/// (never the agent) without a box.
pub fn gen_world(seed: u64, task: TaskKind) -> ToyWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let content = match task {
        TaskKind::Binary => {
            let n = rng.random_range(2..=4);
            let labels = distinct_indices(&mut rng, OBJECTS.len(), n);
            let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n);
            while boxes.len() < n {
                let b = random_box(&mut rng);
                if !boxes.contains(&b) {
                    boxes.push(b);
                }
            }
            let entities: Vec<WorldEntity> = labels
                .into_iter()
                .zip(boxes)
                .map(|(label, bbox)| WorldEntity { label, bbox })
                .collect();
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
                .collect();
            let k = rng.random_range(1..=3usize.min(pairs.len()));
            let relations = distinct_indices(&mut rng, pairs.len(), k)
                .into_iter()
                .map(|p| WorldRelation {
                    subject: pairs[p].0,
                    predicate: rng.random_range(0..PREDICATES.len()),
                    object: pairs[p].1,
                })
                .collect();
            WorldContent::Binary { entities, relations }
        }
        TaskKind::Nary => {
            let verb = rng.random_range(0..VERBS.len());
            let inventory = VERBS[verb].1;
            let extra = rng.random_range(1..=3);
            let mut picked = distinct_indices(&mut rng, inventory.len() - 1, extra);
            picked.sort_unstable();
            let sentinel_slot = if rng.random_bool(0.3) {
                Some(rng.random_range(0..extra) + 1)
            } else {
                None
            };
            let roles = std::iter::once(0)
                .chain(picked.into_iter().map(|i| i + 1))
                .enumerate()
                .map(|(slot, r)| WorldRole {
                    role: inventory[r].to_string(),
                    noun: rng.random_range(0..NOUNS.len()),
                    bbox: if sentinel_slot == Some(slot) {
                        BoundingBox::SENTINEL
                    } else {
                        random_box(&mut rng)
                    },
                })
                .collect();
            WorldContent::Nary { verb, roles }
        }
    };
    ToyWorld {
        world_id: seed,
        content,
    }
}

/// Lexicon covering every verb class the simulator can emit.
pub fn sim_lexicon() -> VerbLexicon {
    VerbLexicon::from_verbs(VERBS.iter().map(|(v, _)| *v))
}

/// Logits for one decision slot: one row per context, one column per choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTable {
    pub rows: usize,
    pub cols: usize,
    pub logits: Vec<f64>,
}

impl LogitTable {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            logits: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.logits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.logits[r * c..(r + 1) * c]
    }

    /// Softmax of row `r`.
    pub fn probs(&self, r: usize) -> Vec<f64> {
        let row = self.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn log_prob(&self, r: usize, c: usize) -> f64 {
        let row = self.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        row[c] - lse
    }
}

/// Decision slots of the choice policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(usize)]
pub enum Slot {
    /// Mention a ground-truth relation or skip it (binary only).
    Emit = 0,
    /// Object label given the true object label.
    ObjectLabel = 1,
    /// Predicate given the true predicate.
    Predicate = 2,
    /// Offset per box coordinate.
    Jitter = 3,
    /// Verb given the true verb.
    Verb = 4,
    /// Role filler given the true filler.
    Noun = 5,
}

const SLOT_COUNT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub slot: Slot,
    pub row: usize,
    pub choice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoicePolicy {
    pub tables: Vec<LogitTable>,
}

impl ChoicePolicy {
    /// All-zero logits: every choice uniform.
    pub fn uniform() -> Self {
        let mut tables = Vec::with_capacity(SLOT_COUNT);
        tables.push(LogitTable::zeros(1, 2));
        tables.push(LogitTable::zeros(OBJECTS.len(), OBJECTS.len()));
        tables.push(LogitTable::zeros(PREDICATES.len(), PREDICATES.len()));
        tables.push(LogitTable::zeros(4, JITTER_OFFSETS.len()));
        tables.push(LogitTable::zeros(VERBS.len(), VERBS.len()));
        tables.push(LogitTable::zeros(NOUNS.len(), NOUNS.len()));
        Self { tables }
    }

    /// Starting point for training: the correct label is favoured, zero
    /// offset is mildly favoured, and mentioning a relation is a coin flip.
    /// Rewards start well above zero with room to improve.
    pub fn initial() -> Self {
        let mut p = Self::uniform();
        for (slot, bias) in [(Slot::ObjectLabel, 1.5), (Slot::Predicate, 1.0), (Slot::Verb, 0.5), (Slot::Noun, 1.5)] {
            let t = p.table_mut(slot);
            for r in 0..t.rows {
                t.row_mut(r)[r] = bias;
            }
        }
        let j = p.table_mut(Slot::Jitter);
        for r in 0..4 {
            j.row_mut(r)[2] = 0.5;
        }
        p
    }

    pub fn table(&self, slot: Slot) -> &LogitTable {
        &self.tables[slot as usize]
    }

    pub fn table_mut(&mut self, slot: Slot) -> &mut LogitTable {
        &mut self.tables[slot as usize]
    }

    fn in_support(&self, d: &Decision) -> bool {
        let t = self.table(d.slot);
        d.row < t.rows && d.choice < t.cols
    }

    pub fn log_prob(&self, d: &Decision) -> f64 {
        self.table(d.slot).log_prob(d.row, d.choice)
    }

    pub fn log_probs(&self, ds: &[Decision]) -> Vec<f64> {
        ds.iter().map(|d| self.log_prob(d)).collect()
    }

    /// `self += scale * grad`, table by table.
    pub fn step(&mut self, grad: &[LogitTable], scale: f64) {
        for (t, g) in self.tables.iter_mut().zip(grad) {
            for (x, d) in t.logits.iter_mut().zip(&g.logits) {
                *x += scale * d;
            }
        }
    }

    fn sample(&self, slot: Slot, row: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Decision>) -> usize {
        let probs = self.table(slot).probs(row);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut choice = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                choice = i;
                break;
            }
        }
        out.push(Decision { slot, row, choice });
        choice
    }

    fn sample_box(&self, b: &BoundingBox, rng: &mut ChaCha8Rng, out: &mut Vec<Decision>) -> BoundingBox {
        let mut d = [0i64; 4];
        for (coord, slot) in d.iter_mut().enumerate() {
            *slot = JITTER_OFFSETS[self.sample(Slot::Jitter, coord, rng, out)];
        }
        b.offset(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledResponse {
    pub text: String,
    pub decisions: Vec<Decision>,
    /// Log-prob of each decision under the sampling policy.
    pub logp: Vec<f64>,
}

/// Draws one completion: a well-formed envelope whose think block follows
/// the three-step reasoning template and whose answer is a canonical
/// caption (binary) or frame (n-ary).
pub fn sample_response(policy: &ChoicePolicy, world: &ToyWorld, rng: &mut ChaCha8Rng) -> SampledResponse {
    let mut ds = Vec::new();
    let (think, answer) = match &world.content {
        WorldContent::Binary { entities, relations } => {
            let mut caption = SceneGraphCaption::default();
            for r in relations {
                if policy.sample(Slot::Emit, 0, rng, &mut ds) == 0 {
                    continue;
                }
                let (s, o) = (&entities[r.subject], &entities[r.object]);
                let sl = OBJECTS[policy.sample(Slot::ObjectLabel, s.label, rng, &mut ds)];
                let sb = policy.sample_box(&s.bbox, rng, &mut ds);
                let p = PREDICATES[policy.sample(Slot::Predicate, r.predicate, rng, &mut ds)];
                let ol = OBJECTS[policy.sample(Slot::ObjectLabel, o.label, rng, &mut ds)];
                let ob = policy.sample_box(&o.bbox, rng, &mut ds);
                for (label, b) in [(sl, sb), (ol, ob)] {
                    let known = caption.entities.iter().any(|e| e.label == label && e.boxes.contains(&b));
                    if !known {
                        caption.entities.push(EntityMention {
                            label: label.to_string(),
                            boxes: vec![b],
                        });
                    }
                }
                caption.predicates.push(PredicateMention {
                    predicate: p.to_string(),
                    subject_boxes: vec![sb],
                    object_boxes: vec![ob],
                });
            }
            let triplets = extract_triplets(&caption).value;
            (binary_cot(&caption, &triplets), serialize_caption(&caption))
        }
        WorldContent::Nary { verb, roles } => {
            let v = VERBS[policy.sample(Slot::Verb, *verb, rng, &mut ds)].0;
            let mut frame = SituationFrame {
                verb: v.to_string(),
                ..Default::default()
            };
            for r in roles {
                let noun = NOUNS[policy.sample(Slot::Noun, r.noun, rng, &mut ds)];
                let bbox = if r.bbox.is_sentinel() {
                    BoundingBox::SENTINEL
                } else {
                    policy.sample_box(&r.bbox, rng, &mut ds)
                };
                frame.roles.push(RoleBinding {
                    role: r.role.clone(),
                    entity_label: noun.to_string(),
                    bbox,
                });
            }
            (nary_cot(&frame), serialize_frame(&frame))
        }
    };
    let logp = policy.log_probs(&ds);
    SampledResponse {
        text: wrap_envelope(&think, &answer),
        decisions: ds,
        logp,
    }
}

/// A rollout group plus the decisions behind each response.
#[derive(Debug, Clone, PartialEq)]
pub struct ProvenancedGroup {
    pub group: RolloutGroup,
    pub decisions: Vec<Vec<Decision>>,
}

/// Empty decision lists still need one unit for the log-prob sequences; a
/// skipped-everything response contributes through this placeholder with
/// log-prob 0 under every policy.
fn padded(v: Vec<f64>) -> Vec<f64> {
    if v.is_empty() {
        vec![0.0]
    } else {
        v
    }
}

impl ProvenancedGroup {
    /// Builds a group from responses sampled under `old`, scoring new and
    /// reference log-probs on the same decisions.
    pub fn build(
        prompt_id: String,
        responses: Vec<SampledResponse>,
        rewards: &[f64],
        current: &ChoicePolicy,
        reference: &ChoicePolicy,
    ) -> Result<Self, SimError> {
        let mut samples = Vec::with_capacity(responses.len());
        let mut decisions = Vec::with_capacity(responses.len());
        for (r, &reward) in responses.into_iter().zip(rewards) {
            samples.push(ResponseSample {
                response_text: r.text,
                reward,
                logp_new: TokenLogProbs::new(padded(current.log_probs(&r.decisions)))?,
                logp_old: TokenLogProbs::new(padded(r.logp))?,
                logp_ref: TokenLogProbs::new(padded(reference.log_probs(&r.decisions)))?,
            });
            decisions.push(r.decisions);
        }
        Ok(Self {
            group: RolloutGroup { prompt_id, samples },
            decisions,
        })
    }

    /// The group with `logp_new` re-evaluated under `policy`.
    pub fn rescored(&self, policy: &ChoicePolicy) -> Result<RolloutGroup, SimError> {
        self.check(policy)?;
        let mut g = self.group.clone();
        for (s, ds) in g.samples.iter_mut().zip(&self.decisions) {
            s.logp_new = TokenLogProbs::new(padded(policy.log_probs(ds)))?;
        }
        Ok(g)
    }

    fn check(&self, policy: &ChoicePolicy) -> Result<(), SimError> {
        if self.decisions.len() != self.group.samples.len() {
            return Err(SimError::ProvenanceMismatch(format!(
                "{} decision lists for {} responses",
                self.decisions.len(),
                self.group.samples.len()
            )));
        }
        for (i, (ds, s)) in self.decisions.iter().zip(&self.group.samples).enumerate() {
            if ds.len().max(1) != s.logp_old.len() {
                return Err(SimError::ProvenanceMismatch(format!(
                    "response {i}: {} decisions but {} log-probs",
                    ds.len(),
                    s.logp_old.len()
                )));
            }
            if let Some(d) = ds.iter().find(|d| !policy.in_support(d)) {
                return Err(SimError::ProvenanceMismatch(format!("response {i}: {d:?} outside the policy tables")));
            }
        }
        Ok(())
    }
}

/// Objective of `group` with `logp_new` evaluated under `policy`.
pub fn objective_at(policy: &ChoicePolicy, group: &ProvenancedGroup, cfg: &GrpoConfig) -> Result<grpo::GrpoStats, SimError> {
    Ok(grpo::objective(&group.rescored(policy)?, cfg)?)
}

/// Exact gradient of [`objective_at`] with respect to every logit, with
/// old/reference log-probs and advantages held fixed.
pub fn grad_objective(policy: &ChoicePolicy, group: &ProvenancedGroup, cfg: &GrpoConfig) -> Result<Vec<LogitTable>, SimError> {
    let g = group.rescored(policy)?;
    let dlogp = grpo::objective_grad_logp(&g, cfg)?;
    let mut grad: Vec<LogitTable> = policy
        .tables
        .iter()
        .map(|t| LogitTable::zeros(t.rows, t.cols))
        .collect();
    for (ds, dl) in group.decisions.iter().zip(&dlogp) {
        for (d, &w) in ds.iter().zip(dl) {
            if w == 0.0 {
                continue;
            }
            // d log softmax(row)[choice] / d logit[k] = [k == choice] - p_k
            let probs = policy.table(d.slot).probs(d.row);
            let row = grad[d.slot as usize].row_mut(d.row);
            for (k, p) in probs.iter().enumerate() {
                row[k] += w * (if k == d.choice { 1.0 } else { 0.0 } - p);
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub task: TaskKind,
    pub group_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Steps between copies of the current policy into the old policy.
    pub refresh_interval: usize,
    /// Global L2 bound on each update's gradient; 0 disables clipping.
    /// The response-level KL gradient scales with pi_ref/pi_new over the
    /// whole response, which is occasionally huge for a rare sample.
    pub max_grad_norm: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Binary,
            group_size: 8,
            steps: 2000,
            learning_rate: 0.5,
            seed: 1,
            refresh_interval: 1,
            max_grad_norm: 1.0,
        }
    }
}

/// Full run configuration; also the layout of the configuration file, with
/// one section per field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sim: SimConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.sim.group_size < 2 {
            return Err(SimError::Config("group_size must be at least 2".into()));
        }
        if self.sim.steps < 1 {
            return Err(SimError::Config("steps must be at least 1".into()));
        }
        if self.sim.refresh_interval < 1 {
            return Err(SimError::Config("refresh_interval must be at least 1".into()));
        }
        if !self.sim.learning_rate.is_finite() || self.sim.learning_rate < 0.0 {
            return Err(SimError::Config("learning_rate must be finite and >= 0".into()));
        }
        if !self.sim.max_grad_norm.is_finite() || self.sim.max_grad_norm < 0.0 {
            return Err(SimError::Config("max_grad_norm must be finite and >= 0".into()));
        }
        self.grpo.validate()?;
        self.reward.validate().map_err(|e| SimError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_completion_length: f64,
    pub mean_kl: f64,
    pub objective: f64,
}

pub const TRACE_HEADER: &str = "step,mean_reward,mean_completion_length,mean_kl,objective";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:.10},{:.4},{:.10},{:.10}\n",
            r.step, r.mean_reward, r.mean_completion_length, r.mean_kl, r.objective
        ));
    }
    s
}

/// Output of a training run: the trace and the final policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub trace: Vec<TraceRow>,
    pub policy: ChoicePolicy,
    pub reference: ChoicePolicy,
}

/// Gradient-ascent GRPO loop over fresh seeded worlds.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, SimError> {
    train_from(cfg, ChoicePolicy::initial())
}

pub fn train_from(cfg: &TrainConfig, start: ChoicePolicy) -> Result<TrainOutcome, SimError> {
    cfg.validate()?;
    let lexicon = sim_lexicon();
    let reference = start.clone();
    let mut policy = start;
    let mut old = policy.clone();
    let mut trace = Vec::with_capacity(cfg.sim.steps);
    let g = cfg.sim.group_size;

    for step in 0..cfg.sim.steps {
        if step % cfg.sim.refresh_interval == 0 {
            old = policy.clone();
        }
        let world = gen_world(derive_seed(cfg.sim.seed, step as u64, 0), cfg.sim.task);
        let gt = world.ground_truth();
        let responses: Vec<SampledResponse> = (0..g)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.sim.seed, step as u64, i as u64 + 1));
                sample_response(&old, &world, &mut rng)
            })
            .collect();
        let rewards: Vec<f64> = responses
            .iter()
            .map(|r| total_reward(&r.text, &gt, &cfg.reward, &lexicon).total)
            .collect();
        let mean_len = responses.iter().map(|r| r.text.chars().count() as f64).sum::<f64>() / g as f64;
        let group = ProvenancedGroup::build(format!("world-{}", world.world_id), responses, &rewards, &policy, &reference)?;
        let stats = grpo::objective(&group.group, &cfg.grpo)?;
        if cfg.sim.learning_rate > 0.0 {
            let grad = grad_objective(&policy, &group, &cfg.grpo)?;
            let norm = grad_norm(&grad);
            let scale = if cfg.sim.max_grad_norm > 0.0 && norm > cfg.sim.max_grad_norm {
                cfg.sim.max_grad_norm / norm
            } else {
                1.0
            };
            policy.step(&grad, cfg.sim.learning_rate * scale);
        }
        trace.push(TraceRow {
            step,
            mean_reward: rewards.iter().sum::<f64>() / g as f64,
            mean_completion_length: mean_len,
            mean_kl: stats.kl,
            objective: stats.objective,
        });
    }
    Ok(TrainOutcome {
        trace,
        policy,
        reference,
    })
}

pub fn grad_norm(grad: &[LogitTable]) -> f64 {
    grad.iter().flat_map(|t| &t.logits).map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean reward over the first and last `window` steps of a trace.
pub fn window_means(trace: &[TraceRow], window: usize) -> (f64, f64) {
    let w = window.min(trace.len()).max(1);
    let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.mean_reward).sum::<f64>() / rows.len() as f64;
    (mean(&trace[..w]), mean(&trace[trace.len() - w..]))
}
