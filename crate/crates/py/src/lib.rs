//! Python bindings. Structured values cross the boundary as plain dicts
//! and lists in the same shapes as the JSON Lines files.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use relscore::corpus::{self, AnswerFormat, GroundTruthRecord, GroundTruthSet, PredictionRecord};
use relscore::geom::{self, BoundingBox};
use relscore::grpo::{self, Aggregation, GrpoConfig, RolloutGroup};
use relscore::metrics::ReportOptions;
use relscore::relgram::{self, PromptKind, TaskKind, VerbLexicon};
use relscore::reward::RewardConfig;
use relscore::sim::{self, TrainConfig};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&s).map_err(value_error)
}

fn task_kind(s: &str) -> PyResult<TaskKind> {
    match s {
        "binary" => Ok(TaskKind::Binary),
        "nary" => Ok(TaskKind::Nary),
        _ => Err(value_error(format!("task must be 'binary' or 'nary', got {s:?}"))),
    }
}

fn lexicon(verbs: Vec<String>) -> VerbLexicon {
    VerbLexicon::from_verbs(verbs.iter().map(String::as_str))
}

/// Integer box `[x1, y1, x2, y2]`; `[-1, -1, -1, -1]` marks an absent box.
#[pyclass(name = "BoundingBox", frozen, eq, hash, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyBoundingBox(BoundingBox);

#[pymethods]
impl PyBoundingBox {
    #[new]
    fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> PyResult<Self> {
        BoundingBox::new(x1, y1, x2, y2).map(Self).map_err(value_error)
    }

    #[staticmethod]
    fn sentinel() -> Self {
        Self(BoundingBox::SENTINEL)
    }

    #[getter]
    fn coords(&self) -> [i64; 4] {
        self.0.coords()
    }

    #[getter]
    fn is_sentinel(&self) -> bool {
        self.0.is_sentinel()
    }

    fn area(&self) -> i64 {
        self.0.area()
    }

    fn iou(&self, other: &PyBoundingBox) -> f64 {
        geom::iou(&self.0, &other.0)
    }

    /// IoU as an exact `(numerator, denominator)` pair.
    fn iou_exact(&self, other: &PyBoundingBox) -> (i64, i64) {
        let r = geom::iou_exact(&self.0, &other.0);
        (*r.numer(), *r.denom())
    }

    fn __repr__(&self) -> String {
        format!("BoundingBox({})", self.0)
    }
}

fn bbox(c: [i64; 4]) -> PyResult<BoundingBox> {
    BoundingBox::from_coords(c).map_err(value_error)
}

#[pyfunction]
fn iou(a: [i64; 4], b: [i64; 4]) -> PyResult<f64> {
    Ok(geom::iou(&bbox(a)?, &bbox(b)?))
}

/// Returns `{"think", "answer", "well_formed"}`.
#[pyfunction]
fn parse_envelope<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &relgram::parse_envelope(text))
}

/// Returns `{"caption", "triplets", "diagnostics"}`.
#[pyfunction]
fn parse_caption<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let c = relgram::parse_scene_graph_caption(text);
    let t = relgram::extract_triplets(&c.value);
    let diagnostics: Vec<_> = c.diagnostics.iter().chain(&t.diagnostics).collect();
    to_py(
        py,
        &serde_json::json!({"caption": c.value, "triplets": t.value, "diagnostics": diagnostics}),
    )
}

/// Returns `{"triplets", "diagnostics"}`.
#[pyfunction]
fn parse_list<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let l = relgram::parse_scene_graph_list(text);
    to_py(py, &serde_json::json!({"triplets": l.value, "diagnostics": l.diagnostics}))
}

/// Returns `{"frame", "diagnostics"}`. `verbs` lists the verb classes to
/// recognize; their common inflections are added automatically.
#[pyfunction]
fn parse_frame<'py>(py: Python<'py>, text: &str, verbs: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let f = relgram::parse_situation_frame(text, &lexicon(verbs));
    to_py(py, &serde_json::json!({"frame": f.value, "diagnostics": f.diagnostics}))
}

#[pyfunction]
fn serialize_caption(caption: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(relgram::serialize_caption(&from_py(caption)?))
}

#[pyfunction]
fn serialize_list(triplets: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(relgram::serialize_list(&from_py::<Vec<relgram::Triplet>>(triplets)?))
}

#[pyfunction]
fn serialize_frame(frame: &Bound<'_, PyAny>) -> PyResult<String> {
    Ok(relgram::serialize_frame(&from_py(frame)?))
}

#[pyfunction]
#[pyo3(signature = (kind, ground_truth = ""))]
fn render_prompt(kind: &str, ground_truth: &str) -> PyResult<String> {
    let kind: PromptKind = kind.parse().map_err(value_error)?;
    Ok(relgram::render_prompt(kind, ground_truth))
}

fn reward_config(alpha: f64, nary_weight: f64, iou_threshold: f64, gate_on_format: bool) -> PyResult<RewardConfig> {
    let cfg = RewardConfig {
        alpha,
        nary_weight,
        iou_threshold,
        gate_on_format,
    };
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

/// Scores one completion against a ground-truth record (same layout as a
/// line of the ground-truth file). Returns the reward breakdown.
#[pyfunction]
#[pyo3(signature = (output_text, ground_truth, alpha = 0.5, nary_weight = 0.5, iou_threshold = 0.5, gate_on_format = false))]
fn total_reward<'py>(
    py: Python<'py>,
    output_text: &str,
    ground_truth: &Bound<'py, PyAny>,
    alpha: f64,
    nary_weight: f64,
    iou_threshold: f64,
    gate_on_format: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = reward_config(alpha, nary_weight, iou_threshold, gate_on_format)?;
    let record: GroundTruthRecord = from_py(ground_truth)?;
    let gts = GroundTruthSet::from_records(std::slice::from_ref(&record), &VerbLexicon::default()).map_err(value_error)?;
    let gt = gts.get(&record.image_id).map_err(value_error)?;
    to_py(py, &relscore::reward::total_reward(output_text, gt, &cfg, &gts.lexicon))
}

/// Corpus evaluation over prediction and ground-truth record lists.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, task = "binary", iou_threshold = 0.5, verb_constraint = true, pooled_mrecall = false, answer_format = "caption", verbs = Vec::new()))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    predictions: &Bound<'py, PyAny>,
    ground_truth: &Bound<'py, PyAny>,
    task: &str,
    iou_threshold: f64,
    verb_constraint: bool,
    pooled_mrecall: bool,
    answer_format: &str,
    verbs: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let preds: Vec<PredictionRecord> = from_py(predictions)?;
    let records: Vec<GroundTruthRecord> = from_py(ground_truth)?;
    let gts = GroundTruthSet::from_records(&records, &lexicon(verbs)).map_err(value_error)?;
    let options = ReportOptions {
        iou_threshold,
        verb_constraint,
        pooled_mrecall,
    };
    let report = match task_kind(task)? {
        TaskKind::Binary => {
            let format: AnswerFormat = answer_format.parse().map_err(value_error)?;
            corpus::eval_sgg(&preds, &gts, format, options)
        }
        TaskKind::Nary => corpus::eval_gsr(&preds, &gts, options),
    }
    .map_err(value_error)?;
    to_py(py, &report)
}

#[pyfunction]
#[pyo3(signature = (rewards, std_floor = 1e-8))]
fn advantages(rewards: Vec<f64>, std_floor: f64) -> PyResult<Vec<f64>> {
    grpo::advantages(&rewards, std_floor).map_err(value_error)
}

/// `r - ln r - 1` for `r = exp(log_r)`.
#[pyfunction]
fn kl_estimator(log_r: f64) -> f64 {
    grpo::kl_estimator(log_r)
}

fn grpo_config(epsilon: f64, kl_coeff: f64, std_floor: f64, aggregation: &str) -> PyResult<GrpoConfig> {
    let aggregation = match aggregation {
        "response-level" => Aggregation::ResponseLevel,
        "per-token-mean" => Aggregation::PerTokenMean,
        _ => return Err(value_error(format!("unknown aggregation {aggregation:?}"))),
    };
    let cfg = GrpoConfig {
        epsilon,
        kl_coeff,
        std_floor,
        aggregation,
    };
    cfg.validate().map_err(value_error)?;
    Ok(cfg)
}

/// Objective of one rollout group given as
/// `{"prompt_id", "responses": [{"text", "reward", "logp_new", "logp_old", "logp_ref"}]}`.
#[pyfunction]
#[pyo3(signature = (group, epsilon = 0.2, kl_coeff = 0.04, std_floor = 1e-8, aggregation = "response-level"))]
fn grpo_objective<'py>(
    py: Python<'py>,
    group: &Bound<'py, PyAny>,
    epsilon: f64,
    kl_coeff: f64,
    std_floor: f64,
    aggregation: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let g: RolloutGroup = from_py(group)?;
    let cfg = grpo_config(epsilon, kl_coeff, std_floor, aggregation)?;
    to_py(py, &grpo::objective(&g, &cfg).map_err(value_error)?)
}

/// d objective / d logp_new, one list per response.
#[pyfunction]
#[pyo3(signature = (group, epsilon = 0.2, kl_coeff = 0.04, std_floor = 1e-8, aggregation = "response-level"))]
fn grpo_objective_grad(
    group: &Bound<'_, PyAny>,
    epsilon: f64,
    kl_coeff: f64,
    std_floor: f64,
    aggregation: &str,
) -> PyResult<Vec<Vec<f64>>> {
    let g: RolloutGroup = from_py(group)?;
    let cfg = grpo_config(epsilon, kl_coeff, std_floor, aggregation)?;
    grpo::objective_grad_logp(&g, &cfg).map_err(value_error)
}

/// Ground truth of a seeded toy world, as a ground-truth record.
#[pyfunction]
fn toy_world<'py>(py: Python<'py>, seed: u64, task: &str) -> PyResult<Bound<'py, PyAny>> {
    let w = sim::gen_world(seed, task_kind(task)?);
    let id = format!("world-{seed}");
    let record = match w.ground_truth() {
        relscore::reward::GroundTruth::Binary(ts) => GroundTruthRecord::binary_list(id, relgram::serialize_list(&ts)),
        relscore::reward::GroundTruth::Nary(f) => GroundTruthRecord::nary(id, f.verb.clone(), relgram::serialize_frame(&f)),
    };
    to_py(py, &record)
}

/// Runs the simulator and returns the trace rows.
#[pyfunction]
#[pyo3(signature = (task = "binary", seed = 1, steps = 2000, group_size = 8, learning_rate = None))]
fn train_sim<'py>(
    py: Python<'py>,
    task: &str,
    seed: u64,
    steps: usize,
    group_size: usize,
    learning_rate: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = TrainConfig::default();
    cfg.sim.task = task_kind(task)?;
    cfg.sim.seed = seed;
    cfg.sim.steps = steps;
    cfg.sim.group_size = group_size;
    if let Some(lr) = learning_rate {
        cfg.sim.learning_rate = lr;
    }
    let out = py.detach(|| sim::train(&cfg)).map_err(value_error)?;
    to_py(py, &out.trace)
}

#[pymodule]
fn pyrelscore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBoundingBox>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(parse_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(parse_caption, m)?)?;
    m.add_function(wrap_pyfunction!(parse_list, m)?)?;
    m.add_function(wrap_pyfunction!(parse_frame, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_caption, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_list, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_frame, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(total_reward, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(advantages, m)?)?;
    m.add_function(wrap_pyfunction!(kl_estimator, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_objective, m)?)?;
    m.add_function(wrap_pyfunction!(grpo_objective_grad, m)?)?;
    m.add_function(wrap_pyfunction!(toy_world, m)?)?;
    m.add_function(wrap_pyfunction!(train_sim, m)?)?;
    Ok(())
}
