//! End-to-end runs of the `relscore` binary against the fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("relscore-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn relscore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relscore"))
        .args(args)
        .env_remove("RELR1_SIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn eval(cmd: &str, pred: &str, gt: &str, extra: &[&str]) -> Output {
    let (p, g) = (fixture(pred), fixture(gt));
    let mut args = vec![cmd, "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()];
    args.extend_from_slice(extra);
    relscore(&args)
}

fn eval_json(cmd: &str, pred: &str, gt: &str, extra: &[&str]) -> Value {
    let dir = scratch(&format!("{cmd}-{pred}"));
    let mut args = extra.to_vec();
    args.extend(["--out", dir.to_str().unwrap()]);
    let o = eval(cmd, pred, gt, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "report.txt", "run-manifest"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn close(v: &Value, want: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() < 1e-9
}

#[test]
fn sgg_identity_corpus() {
    let r = eval_json("eval-sgg", "sgg_pred_identity.jsonl", "sgg_gt.jsonl", &[]);
    assert!(close(&r["report"]["sgg"]["recall"], 100.0));
    assert!(close(&r["report"]["sgg"]["mrecall"], 100.0));
    let o = eval("eval-sgg", "sgg_pred_identity.jsonl", "sgg_gt.jsonl", &[]);
    assert!(stdout(&o).contains("    100.00     100.00     100.00"));
}

#[test]
fn sgg_empty_answers() {
    let r = eval_json("eval-sgg", "sgg_pred_empty.jsonl", "sgg_gt.jsonl", &[]);
    assert!(close(&r["report"]["sgg"]["recall"], 0.0));
    assert_eq!(r["malformed_envelopes"], 1);
}

#[test]
fn sgg_two_sample_fixture() {
    let r = eval_json("eval-sgg", "sgg_pred_half.jsonl", "sgg_gt.jsonl", &[]);
    assert!(close(&r["report"]["sgg"]["recall"], 75.0));
    let o = eval("eval-sgg", "sgg_pred_half.jsonl", "sgg_gt.jsonl", &[]);
    assert!(stdout(&o).contains("75.00"));
}

#[test]
fn sgg_list_format() {
    let r = eval_json("eval-sgg", "sgg_pred_list.jsonl", "sgg_gt.jsonl", &["--format", "list"]);
    assert!(close(&r["report"]["sgg"]["recall"], 50.0));
}

#[test]
fn gsr_identity_and_fixture() {
    let r = eval_json("eval-gsr", "gsr_pred_identity.jsonl", "gsr_gt.jsonl", &[]);
    for k in ["verb", "value", "value_all", "grnd", "grnd_all"] {
        assert!(close(&r["report"]["gsr"][k], 100.0), "{k}");
    }
    let o = eval("eval-gsr", "gsr_pred_fixture.jsonl", "gsr_gt.jsonl", &[]);
    let text = stdout(&o);
    assert!(text.contains("    100.00      66.67       0.00      33.33       0.00"), "{text}");
}

#[test]
fn gsr_verb_constraint_is_monotone() {
    let on = eval_json("eval-gsr", "gsr_pred_wrong_verb.jsonl", "gsr_gt_two.jsonl", &[]);
    let off = eval_json("eval-gsr", "gsr_pred_wrong_verb.jsonl", "gsr_gt_two.jsonl", &["--no-verb-constraint"]);
    for k in ["value", "value_all", "grnd", "grnd_all"] {
        let (a, b) = (on["report"]["gsr"][k].as_f64().unwrap(), off["report"]["gsr"][k].as_f64().unwrap());
        assert!(b >= a, "{k}: {b} < {a}");
    }
    assert!(off["report"]["gsr"]["value"].as_f64() > on["report"]["gsr"]["value"].as_f64());
}

fn reward_summary(pred: &str, extra: &[&str]) -> (Value, Vec<Value>) {
    let dir = scratch(&format!("reward-{pred}"));
    let mut args = extra.to_vec();
    args.extend(["--out", dir.to_str().unwrap()]);
    let o = eval("reward", pred, "mixed_gt.jsonl", &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("run-manifest").exists());
    let summary = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let lines = std::fs::read_to_string(dir.join("rewards.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    (summary, lines)
}

#[test]
fn reward_identity_corpus() {
    let (s, lines) = reward_summary("mixed_pred_identity.jsonl", &[]);
    assert!(close(&s["overall"]["mean_total"], 2.0));
    assert_eq!(lines.len(), 2);
    assert_eq!(s["by_task"]["binary"]["count"], 1);
    assert_eq!(s["by_task"]["nary"]["count"], 1);
}

#[test]
fn reward_malformed_corpus() {
    let (s, _) = reward_summary("mixed_pred_malformed.jsonl", &[]);
    assert!(close(&s["overall"]["mean_format"], 0.0));
    let (s, _) = reward_summary("mixed_pred_malformed.jsonl", &["--gate-on-format"]);
    assert!(close(&s["overall"]["mean_total"], 0.0));
}

#[test]
fn reward_partitions_by_gate() {
    let (s, lines) = reward_summary("mixed_pred_swapped.jsonl", &[]);
    assert_eq!(s["mismatched"], 2);
    assert_eq!(lines[0]["task_kind"], "nary");
    assert_eq!(lines[0]["diagnostics"][0]["kind"], "task-mismatch");
    assert!(close(&s["by_task"]["binary"]["mean_task"], 0.0));
}

#[test]
fn reward_matches_eval() {
    let o = eval("reward", "sgg_pred_half.jsonl", "sgg_gt.jsonl", &[]);
    assert!(o.status.success());
    let rewards: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mean = rewards.iter().map(|r| r["task"].as_f64().unwrap()).sum::<f64>() / rewards.len() as f64;
    let r = eval_json("eval-sgg", "sgg_pred_half.jsonl", "sgg_gt.jsonl", &[]);
    let s = &r["report"]["sgg"];
    let want = (s["recall"].as_f64().unwrap() + s["mrecall"].as_f64().unwrap()) / 200.0;
    assert!((mean - want).abs() < 1e-9);
}

#[test]
fn reward_flags_override_env_and_file() {
    let dir = scratch("reward-env");
    let cfg = dir.join("c.toml");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(&cfg, "[reward]\nalpha = 0.1\n").unwrap();
    let (p, g) = (fixture("sgg_pred_half.jsonl"), fixture("sgg_gt.jsonl"));
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_relscore"));
        c.args(["reward", "--pred", p.to_str().unwrap(), "--gt", g.to_str().unwrap()]);
        c.args(["--config", cfg.to_str().unwrap()]).args(extra);
        if let Some(v) = env {
            c.env("RELR1_REWARD_ALPHA", v);
        }
        c.output().unwrap()
    };
    // Sample b has recall 1/2 and mean recall 1/2, so alpha cannot move it;
    // an invalid alpha shows which layer won.
    assert_eq!(run(&[], Some("7")).status.code(), Some(1));
    assert!(run(&["--alpha", "0.3"], Some("7")).status.success());
    assert!(run(&[], None).status.success());
}

#[test]
fn missing_ground_truth_is_an_input_error() {
    let o = eval("eval-sgg", "pred_missing_gt.jsonl", "sgg_gt.jsonl", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zzz"));
}

#[test]
fn bad_ground_truth_aborts() {
    let o = eval("eval-sgg", "sgg_pred_half.jsonl", "bad_gt.jsonl", &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(relscore(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(relscore(&["eval-sgg"]).status.code(), Some(1));
    assert_eq!(relscore(&["--help"]).status.code(), Some(0));
}

fn lint(args: &[&str], input: &str) -> Output {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_relscore"))
        .arg("parse")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn parse_lint() {
    let ok = fixture("caption_ok.txt");
    assert!(relscore(&["parse", "--format", "caption", ok.to_str().unwrap()]).status.success());
    let bad = fixture("caption_dangling.txt");
    let o = relscore(&["parse", "--format", "caption", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("46: UnclosedTag"));
    let o = lint(&["--format", "caption"], "");
    assert!(o.status.success());
    assert!(stdout(&o).contains("0 mentions"));
    let frame = fixture("frame_ok.txt");
    assert!(relscore(&["parse", "--format", "frame", frame.to_str().unwrap()]).status.success());
    let o = lint(&["--format", "frame", "--verb", "cutting"], &std::fs::read_to_string(&frame).unwrap());
    assert_eq!(o.status.code(), Some(1));
    let o = lint(&["--format", "list", "--completion"], "<think>x</think><answer>[[\"a\", [0,0,1,1], \"b\", [0,0,2,2], \"on\"]]</answer>");
    assert!(o.status.success(), "{}", stdout(&o));
    let o = lint(&["--format", "list", "--completion"], "[]");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn render_prompt_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    for kind in ["sgg-caption-cot", "gsr-cot"] {
        let gt = golden.join(format!("{kind}.gt"));
        let o = relscore(&["render-prompt", "--kind", kind, "--gt-file", gt.to_str().unwrap()]);
        assert!(o.status.success());
        assert_eq!(o.stdout, std::fs::read(golden.join(format!("{kind}.txt"))).unwrap(), "{kind}");
    }
    let o = relscore(&["render-prompt", "--kind", "sgg-list-task"]);
    assert_eq!(o.stdout, std::fs::read(golden.join("sgg-list-task.txt")).unwrap());
    let inline = std::fs::read_to_string(golden.join("gsr-cot.gt")).unwrap();
    let o = relscore(&["render-prompt", "--kind", "gsr-cot", "--gt-inline", &inline]);
    assert_eq!(o.stdout, std::fs::read(golden.join("gsr-cot.txt")).unwrap());
    assert_eq!(relscore(&["render-prompt", "--kind", "gsr-cot"]).status.code(), Some(1));
    assert_eq!(relscore(&["render-prompt", "--kind", "nope", "--gt-inline", "x"]).status.code(), Some(1));
}

fn train_sim(name: &str, extra: &[&str]) -> String {
    let dir = scratch(name);
    let cfg = fixture("train.toml");
    let mut args = vec!["train-sim", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = relscore(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run-manifest")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train-sim");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
    std::fs::read_to_string(dir.join("trace.csv")).unwrap()
}

#[test]
fn train_sim_is_reproducible() {
    let a = train_sim("ts-a", &["--steps", "30"]);
    let b = train_sim("ts-b", &["--steps", "30"]);
    assert_eq!(a, b);
    assert!(a.starts_with("step,mean_reward,mean_completion_length,mean_kl,objective\n"));
    assert_eq!(a.lines().count(), 31);
    let c = train_sim("ts-c", &["--steps", "30", "--seed", "6"]);
    assert_ne!(a, c);
}

#[test]
fn train_sim_zero_learning_rate_has_no_kl() {
    let t = train_sim("ts-lr0", &["--learning-rate", "0", "--task", "nary"]);
    for line in t.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn train_sim_rejects_bad_config() {
    let dir = scratch("ts-bad");
    let o = relscore(&["train-sim", "--group-size", "1", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
