//! `relscore`: corpus evaluation, reward scoring, simulator training, format
//! linting and prompt rendering.
//!
//! Exit status: 0 on success, 1 for input or validation errors (including
//! lint findings), 2 for internal errors.

mod config;
mod manifest;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use relscore::corpus::{
    eval_gsr, eval_sgg, read_predictions, score_rewards, summarize_rewards, AnswerFormat, EvalReport, GroundTruthSet,
    PredictionRecord,
};
use relscore::metrics::ReportOptions;
use relscore::relgram::{
    extract_triplets, parse_envelope, parse_scene_graph_caption, parse_scene_graph_list, parse_situation_frame,
    render_prompt, Diagnostic, PromptKind, TaskKind, VerbLexicon,
};
use relscore::sim::{train, trace_csv, window_means, TrainConfig};

use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<relscore::corpus::CorpusError> for CliError {
    fn from(e: relscore::corpus::CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "relscore", version, about = "Score structured visual-relation outputs and simulate GRPO training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scene graph evaluation: Recall, mRecall and their mean.
    EvalSgg(EvalSggArgs),
    /// Grounded situation evaluation: verb, value, value-all, grnd, grnd-all.
    EvalGsr(EvalGsrArgs),
    /// Per-record format and task rewards, with per-task summaries.
    Reward(RewardArgs),
    /// Train the toy choice policy with GRPO and write the trace.
    TrainSim(TrainSimArgs),
    /// Lint one caption, frame, list or completion; exits 1 on any finding.
    Parse(ParseArgs),
    /// Print a prompt template with the ground truth filled in.
    RenderPrompt(RenderPromptArgs),
}

#[derive(Args)]
struct Inputs {
    /// Predictions, JSON Lines of {"image_id", "output_text"}.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth, JSON Lines (see the README for the record layout).
    #[arg(long)]
    gt: PathBuf,
    /// Extra verb forms, a JSON object mapping surface form to verb class.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Output directory for the report files and run-manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalSggArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// IoU threshold for both boxes of a triplet.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Answer grammar: tagged caption or bracketed list.
    #[arg(long, value_enum, default_value_t = FormatArg::Caption)]
    format: FormatArg,
    /// Compute mRecall from corpus-pooled per-predicate counts instead of
    /// averaging per-sample mean recall.
    #[arg(long)]
    pooled_mrecall: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Caption,
    List,
}

#[derive(Args)]
struct EvalGsrArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// IoU threshold for grounded roles.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Credit roles even when the verb is wrong.
    #[arg(long)]
    no_verb_constraint: bool,
}

#[derive(Args)]
struct RewardArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// TOML configuration; only the [reward] section is used here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight on recall in the binary reward.
    #[arg(long)]
    alpha: Option<f64>,
    /// Weight on entity value in the n-ary reward.
    #[arg(long)]
    nary_weight: Option<f64>,
    /// IoU threshold used by the task rewards.
    #[arg(long)]
    iou: Option<f64>,
    /// Zero the whole reward when the envelope is malformed.
    #[arg(long)]
    gate_on_format: bool,
}

#[derive(Args)]
struct TrainSimArgs {
    /// TOML configuration with [reward], [grpo] and [sim] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Simulated task.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    /// Output directory for trace.csv and run-manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Binary,
    Nary,
}

#[derive(Clone, Copy, ValueEnum)]
enum LintFormat {
    Caption,
    Frame,
    List,
}

#[derive(Args)]
struct ParseArgs {
    /// Grammar to check.
    #[arg(long, value_enum)]
    format: LintFormat,
    /// Treat the input as a full completion: check the think/answer
    /// envelope, then lint the answer.
    #[arg(long)]
    completion: bool,
    /// Verb classes for frames (repeatable). Without any verbs or
    /// --lexicon, the first word before any tag is taken as the verb.
    #[arg(long = "verb")]
    verbs: Vec<String>,
    /// Verb lexicon JSON for frames.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Input file; standard input when omitted.
    file: Option<PathBuf>,
}

#[derive(Args)]
struct RenderPromptArgs {
    /// Template: sgg-caption-cot, gsr-cot or sgg-list-task.
    #[arg(long)]
    kind: String,
    /// Read the ground-truth caption or frame from a file.
    #[arg(long, conflicts_with = "gt_inline")]
    gt_file: Option<PathBuf>,
    /// Ground-truth caption or frame given inline.
    #[arg(long)]
    gt_inline: Option<String>,
}

fn read_input(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

pub(crate) fn write_file(p: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(p, text).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))
}

fn out_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn json_value<T: serde::Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

fn load_lexicon(p: Option<&Path>) -> Result<VerbLexicon, CliError> {
    match p {
        None => Ok(VerbLexicon::default()),
        Some(p) => serde_json::from_str(&read_input(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
    }
}

struct Corpus {
    preds: Vec<PredictionRecord>,
    gts: GroundTruthSet,
    files: Vec<PathBuf>,
}

fn load_corpus(inputs: &Inputs) -> Result<Corpus, CliError> {
    let base = load_lexicon(inputs.lexicon.as_deref())?;
    let preds = read_predictions(&read_input(&inputs.pred)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", inputs.pred.display())))?;
    let gts = GroundTruthSet::parse(&read_input(&inputs.gt)?, &base)
        .map_err(|e| CliError::Input(format!("{}: {e}", inputs.gt.display())))?;
    let mut files = vec![inputs.pred.clone(), inputs.gt.clone()];
    files.extend(inputs.lexicon.clone());
    Ok(Corpus { preds, gts, files })
}

fn eval_summary(r: &EvalReport) -> String {
    format!(
        "{}\nrecords {}, malformed envelopes {}, parse failures {}, unpredicted ground truth {}\n",
        r.report.render_table(),
        r.records,
        r.malformed_envelopes,
        r.parse_failures,
        r.unpredicted
    )
}

fn write_eval(command: &str, inputs: &Inputs, files: &[PathBuf], report: &EvalReport) -> Result<(), CliError> {
    let summary = eval_summary(report);
    print!("{summary}");
    if let Some(dir) = &inputs.out {
        out_dir(dir)?;
        write_file(&dir.join("report.json"), &to_json(report)?)?;
        write_file(&dir.join("report.txt"), &summary)?;
        let paths: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
        RunManifest::new(command, json_value(&report.report.options)?, &paths)?.write(dir)?;
    }
    Ok(())
}

fn run_eval_sgg(a: EvalSggArgs) -> Result<(), CliError> {
    let c = load_corpus(&a.inputs)?;
    let format = match a.format {
        FormatArg::Caption => AnswerFormat::Caption,
        FormatArg::List => AnswerFormat::List,
    };
    let options = ReportOptions {
        iou_threshold: a.iou,
        pooled_mrecall: a.pooled_mrecall,
        ..Default::default()
    };
    let report = eval_sgg(&c.preds, &c.gts, format, options)?;
    write_eval("eval-sgg", &a.inputs, &c.files, &report)
}

fn run_eval_gsr(a: EvalGsrArgs) -> Result<(), CliError> {
    let c = load_corpus(&a.inputs)?;
    let options = ReportOptions {
        iou_threshold: a.iou,
        verb_constraint: !a.no_verb_constraint,
        ..Default::default()
    };
    let report = eval_gsr(&c.preds, &c.gts, options)?;
    write_eval("eval-gsr", &a.inputs, &c.files, &report)
}

fn run_reward(a: RewardArgs) -> Result<(), CliError> {
    let mut cfg = config::load(a.config.as_deref(), std::env::vars())?.reward;
    if let Some(x) = a.alpha {
        cfg.alpha = x;
    }
    if let Some(x) = a.nary_weight {
        cfg.nary_weight = x;
    }
    if let Some(x) = a.iou {
        cfg.iou_threshold = x;
    }
    cfg.gate_on_format |= a.gate_on_format;
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;

    let c = load_corpus(&a.inputs)?;
    let records = score_rewards(&c.preds, &c.gts, &cfg)?;
    let summary = summarize_rewards(&records, &c.gts);
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?);
        lines.push('\n');
    }
    let summary_json = to_json(&summary)?;
    match &a.inputs.out {
        Some(dir) => {
            out_dir(dir)?;
            write_file(&dir.join("rewards.jsonl"), &lines)?;
            write_file(&dir.join("summary.json"), &summary_json)?;
            let mut files: Vec<&Path> = c.files.iter().map(PathBuf::as_path).collect();
            files.extend(a.config.as_deref());
            RunManifest::new("reward", json_value(&cfg)?, &files)?.write(dir)?;
            print!("{summary_json}");
        }
        None => {
            print!("{lines}");
            eprint!("{summary_json}");
        }
    }
    Ok(())
}

fn run_train_sim(a: TrainSimArgs) -> Result<(), CliError> {
    let mut cfg: TrainConfig = config::load(a.config.as_deref(), std::env::vars())?;
    if let Some(x) = a.seed {
        cfg.sim.seed = x;
    }
    if let Some(x) = a.steps {
        cfg.sim.steps = x;
    }
    if let Some(x) = a.task {
        cfg.sim.task = match x {
            TaskArg::Binary => TaskKind::Binary,
            TaskArg::Nary => TaskKind::Nary,
        };
    }
    if let Some(x) = a.learning_rate {
        cfg.sim.learning_rate = x;
    }
    if let Some(x) = a.group_size {
        cfg.sim.group_size = x;
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    out_dir(&a.out)?;
    let out = train(&cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&a.out.join("trace.csv"), &trace_csv(&out.trace))?;
    let inputs: Vec<&Path> = a.config.as_deref().into_iter().collect();
    RunManifest::new("train-sim", json_value(&cfg)?, &inputs)?.write(&a.out)?;

    let (first, last) = window_means(&out.trace, 100);
    let tail = out.trace.last().expect("steps >= 1");
    println!(
        "{} {} steps, seed {}: mean reward {first:.4} (first 100) -> {last:.4} (last 100), final kl {:.4}, mean length {:.1}",
        cfg.sim.task,
        out.trace.len(),
        cfg.sim.seed,
        tail.mean_kl,
        tail.mean_completion_length
    );
    println!("trace written to {}", a.out.join("trace.csv").display());
    Ok(())
}

/// Lexicon holding the first prose word of `text`, if any.
fn first_word_lexicon(text: &str) -> VerbLexicon {
    let head = text.split('<').next().unwrap_or("");
    VerbLexicon::from_verbs(head.split_whitespace().next())
}

fn run_parse(a: ParseArgs) -> Result<bool, CliError> {
    let text = match &a.file {
        Some(p) => read_input(p)?,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| CliError::Input(format!("stdin: {e}")))?;
            s
        }
    };
    let mut findings = 0;
    let answer = if a.completion {
        let env = parse_envelope(&text);
        if !env.well_formed {
            findings += 1;
            println!("0: envelope: expected one <think> block followed by one <answer> block");
        }
        env.answer
    } else {
        text
    };
    let (mentions, diags): (usize, Vec<Diagnostic>) = match a.format {
        LintFormat::Caption => {
            let c = parse_scene_graph_caption(&answer);
            let t = extract_triplets(&c.value);
            let n = c.value.entities.len() + c.value.predicates.len();
            (n, c.diagnostics.into_iter().chain(t.diagnostics).collect())
        }
        LintFormat::Frame => {
            let mut lex = load_lexicon(a.lexicon.as_deref())?;
            lex.extend(&VerbLexicon::from_verbs(a.verbs.iter().map(String::as_str)));
            if lex.is_empty() {
                lex = first_word_lexicon(&answer);
            }
            let f = parse_situation_frame(&answer, &lex);
            (f.value.roles.len(), f.diagnostics)
        }
        LintFormat::List => {
            let l = parse_scene_graph_list(&answer);
            (l.value.len(), l.diagnostics)
        }
    };
    for d in &diags {
        println!("{d}");
    }
    findings += diags.len();
    println!("{mentions} mentions, {findings} diagnostics");
    Ok(findings == 0)
}

fn run_render_prompt(a: RenderPromptArgs) -> Result<(), CliError> {
    let kind: PromptKind = a.kind.parse().map_err(|e: relscore::relgram::PromptError| CliError::Input(e.to_string()))?;
    let gt = match (&a.gt_file, &a.gt_inline) {
        (Some(p), _) => read_input(p)?,
        (None, Some(s)) => s.clone(),
        (None, None) if kind.takes_ground_truth() => {
            return Err(CliError::Input(format!("{} needs --gt-file or --gt-inline", kind.as_str())))
        }
        (None, None) => String::new(),
    };
    print!("{}", render_prompt(kind, &gt));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::EvalSgg(a) => run_eval_sgg(a),
        Command::EvalGsr(a) => run_eval_gsr(a),
        Command::Reward(a) => run_reward(a),
        Command::TrainSim(a) => run_train_sim(a),
        Command::Parse(a) => match run_parse(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::RenderPrompt(a) => run_render_prompt(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("relscore: {e}");
            ExitCode::from(e.code())
        }
    }
}
