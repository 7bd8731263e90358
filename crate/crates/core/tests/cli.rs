use std::path::{Path, PathBuf};
use std::process::Command;

use nlim_core::cli;
use nlim_core::grammar;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str], stdin: &[u8]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut input = stdin;
    let argv = std::iter::once("nlim").chain(args.iter().copied());
    let code = cli::run(argv, &mut input, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn augment_writes_the_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let (code, stdout, _) = run(&["augment", "--spec", s(&data("demo.spec.json")), "--seed", "7", "--count", "5000", "--out", s(&out)], b"");
    assert_eq!(code, 0);
    assert!(stdout.contains("wrote 5000 sentences"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5000);
    for s in grammar::load_corpus(&out).unwrap() {
        s.validate().unwrap();
    }
}

#[test]
fn usage_errors_exit_1() {
    let (code, _, err) = run(&["train", "--arch", "s2s-mtl", "--out", "/tmp/never.nlim"], b"");
    assert_eq!(code, 1);
    assert!(err.contains("--corpus"), "{err}");
    assert_eq!(run(&["augment", "--bogus"], b"").0, 1);
    assert_eq!(run(&["frobnicate"], b"").0, 1);
    assert_eq!(run(&["train", "--corpus", "x", "--arch", "transformer", "--out", "y"], b"").0, 1);
    assert_eq!(run(&["--help"], b"").0, 0);
    assert_eq!(run(&["--version"], b"").0, 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"text\": \"hi\"}\n").unwrap();
    let out = dir.path().join("m.nlim");
    let (code, _, err) = run(&["train", "--corpus", s(&bad), "--arch", "single-intent", "--out", s(&out)], b"");
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = run(&["train", "--corpus", s(&dir.path().join("missing")), "--arch", "single-intent", "--out", s(&out)], b"");
    assert_eq!(code, 2);
    std::fs::write(&out, b"not a model").unwrap();
    assert_eq!(run(&["interpret", "--model", s(&out), "buy"], b"").0, 2);
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"lexicons": {}, "templates": [{"intent": "BUY", "pattern": "{TICKERS}"}]}"#).unwrap();
    assert_eq!(run(&["augment", "--spec", s(&spec), "--count", "3", "--out", s(&dir.path().join("o"))], b"").0, 2);
}

#[test]
fn train_interpret_eval_repl_on_the_smoke_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.nlim");
    let report = dir.path().join("report.json");
    let corpus = data("smoke.jsonl");
    let (code, stdout, stderr) = run(
        &[
            "train", "--corpus", s(&corpus), "--arch", "s2s-mtl", "--hidden", "16", "--epochs", "3", "--batch", "4", "--lr", "0.01",
            "--out", s(&model), "--report", s(&report),
        ],
        b"",
    );
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("saved"));
    assert_eq!(stderr.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    assert!(dir.path().join("tags.txt").exists() && dir.path().join("intents.txt").exists());
    let tags = std::fs::read_to_string(dir.path().join("tags.txt")).unwrap();
    assert_eq!(tags.lines().next(), Some("0\tSTART"));
    assert_eq!(tags.lines().count(), 19);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["epochs"].as_array().unwrap().len(), 3);

    let (code, stdout, _) = run(&["interpret", "--model", s(&model), "buy 5 @ 295.9 tsla"], b"");
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["text"], "buy 5 @ 295.9 tsla");
    assert!(v["intent"].is_string());

    let (code, _, stderr) = run(&["interpret", "--model", s(&model), "caf\u{e9}"], b"");
    assert_eq!(code, 2, "{stderr}");

    let (code, stdout, _) = run(&["eval", "--model", s(&model), "--corpus", s(&corpus)], b"");
    assert_eq!(code, 0);
    let m: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(m["examples"], 20);
    assert!(m["intent_accuracy"].as_f64().unwrap() <= 1.0);

    let input = b"buy 5 @ 295.9 tsla\n\n\xff\xfe\ncaf\xc3\xa9\nadd rsi\r\nno newline at end";
    let (code, stdout, _) = run(&["repl", "--model", s(&model)], input);
    assert_eq!(code, 0);
    assert!(stdout.contains("not valid UTF-8"));
    assert!(stdout.contains("error: "));
    assert_eq!(stdout.matches("intent: ").count(), 3, "{stdout}");
}

#[test]
fn compare_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"max_epochs": 2, "batch_size": 4}, "baseline_hidden": 8, "s2s_mtl_hidden": 8, "kinds": ["SINGLE_INTENT", "S2S_TAGGER"]}"#).unwrap();
    let out = dir.path().join("r.json");
    let (code, stdout, stderr) = run(&["compare", "--corpus", s(&data("smoke.jsonl")), "--config", s(&cfg), "--out", s(&out), "--pretty"], b"");
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("S2S_TAGGER"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["results"].as_array().unwrap().len(), 2);
    std::fs::write(&cfg, "{").unwrap();
    assert_eq!(run(&["compare", "--corpus", s(&data("smoke.jsonl")), "--config", s(&cfg), "--out", s(&out)], b"").0, 2);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_nlim");
    let st = Command::new(bin).args(["train", "--arch", "mtl-e2e"]).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    let st = Command::new(bin).args(["interpret", "--model", "/nonexistent/m.nlim", "hi"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&st.stdout).contains("augment"));
}
