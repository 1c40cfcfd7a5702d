use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const PROFILES: &str = r#"
[[community]]
label = "mainstream"
n_articles = 40
sources = [{ name = "wire.com" }, { name = "shared.com" }]
entities = [{ name = "Acme Corp" }, { name = "Maria Lopez" }]

[[community]]
label = "conspiracy"
n_articles = 40
sources = [{ name = "truth.net" }, { name = "shared.com" }]
entities = [{ name = "Carla Diaz" }, { name = "Union Bank" }]
lexicon_rates = { hedges = 0.05, bias = 0.05 }

[[community]]
label = "bias1"
n_articles = 40
sources = [{ name = "left.com" }]
entities = [{ name = "Senator Hale" }]
emotion_rate = 0.05
valence_bias = 0.8

[[community]]
label = "bias2"
n_articles = 40
sources = [{ name = "right.com" }]
entities = [{ name = "Senator Hale" }]
emotion_rate = 0.05
valence_bias = -0.8
"#;

const DRIFT: &str = r#"
[[slice]]
label = "early"
start = 1420070400
end = 1435708800

[[slice]]
label = "late"
start = 1435708800
end = 1451606400
entity_rotation = 0.5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_community-interest"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn summary(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("one JSON line on stdout")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes the four-community corpus through the CLI.
fn corpus(dir: &Path) -> PathBuf {
    let profile = dir.join("profiles.toml");
    std::fs::write(&profile, PROFILES).unwrap();
    let out = dir.join("synth");
    summary(&run(&["synth", "--profile", s(&profile), "--seed", "3", "--out", s(&out)]));
    out.join("corpus.jsonl")
}

#[test]
fn unknown_group_is_a_usage_error() {
    let out = run(&["extract", "missing.jsonl", "--groups", "style,nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for g in ["style", "complexity", "bias", "entity", "sentiment", "entity_slant", "source"] {
        assert!(err.contains(g), "{err}");
    }
}

#[test]
fn missing_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", s(&dir.path().join("nope.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let out = run(&["matrix", "corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn zero_workers_rejected() {
    let out = run(&["--workers", "0", "validate", "corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_flags() {
    let cases: &[(&[&str], &[&str])] = &[
        (&["matrix"], &["--seed", "--groups", "--algorithm", "--folds", "--workers"]),
        (&["sweep"], &["--fractions", "--metric"]),
        (&["drift"], &["--slices"]),
        (&["train"], &["--pair"]),
        (&["overlap"], &["--kind"]),
        (&["synth"], &["--profile", "--drift", "--seed"]),
        (&["predict"], &["--model", "--article"]),
        (&["cascade", "eval"], &["--cascade", "--flat", "--spec"]),
    ];
    for (cmd, flags) in cases {
        let mut args = cmd.to_vec();
        args.push("--help");
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{cmd:?}");
        let text = String::from_utf8_lossy(&out.stdout);
        for f in *flags {
            assert!(text.contains(f), "{cmd:?} help lacks {f}");
        }
    }
}

#[test]
fn validate_overlap_extract() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("out");
    let v = summary(&run(&["validate", s(&c)]));
    assert_eq!(v["articles"], 160);

    let v = summary(&run(&["overlap", s(&c), "--kind", "source", "--out", s(&out)]));
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    for (i, row) in cells.iter().enumerate() {
        assert_eq!(row[i].as_f64(), Some(100.0));
    }
    assert!(out.join("overlap_source.csv").exists());

    summary(&run(&["extract", s(&c), "--groups", "bias,source", "--out", s(&out)]));
    let text = std::fs::read_to_string(out.join("features.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 100);
    assert_eq!(lines.count(), 160);
}

#[test]
fn matrix_writes_table_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("out");
    let v = summary(&run(&["matrix", s(&c), "--seed", "1", "--quick", "--folds", "3", "--out", s(&out)]));
    assert_eq!(v["cells"], 42);
    assert_eq!(v["svgs"], 6);
    let csv = std::fs::read_to_string(out.join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 43);
    assert!(out.join("matrix_meta.json").exists());
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("out");
    let v = summary(&run(&[
        "train", s(&c), "--pair", "bias1", "bias2", "--groups", "source", "--seed", "2", "--quick", "--folds", "3",
        "--out", s(&out),
    ]));
    assert!(v["auc"].as_f64().unwrap() > 0.9);
    let v = summary(&run(&["predict", "--model", s(&out.join("model.json")), "--article", s(&c)]));
    assert_eq!(v["positive"], "bias2");
    assert_eq!(v["predictions"].as_array().unwrap().len(), 160);
}

#[test]
fn sweep_and_drift() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("out");
    let v = summary(&run(&[
        "sweep", s(&c), "--fractions", "0.5", "--groups", "source", "--seed", "4", "--quick", "--folds", "3",
        "--min-articles", "10", "--out", s(&out),
    ]));
    // Baseline plus one fraction for each of six pairs.
    assert_eq!(v["rows"], 12);
    assert!(out.join("sweep.csv").exists());

    let v = summary(&run(&[
        "drift", s(&c), "--slices", "early:1420070400:1435708800", "late:1435708800:1451606400", "--groups",
        "source", "--seed", "4", "--quick", "--folds", "3", "--min-articles", "5", "--out", s(&out),
    ]));
    assert_eq!(v["rows"], 6 * 4);
}

#[test]
fn synth_with_drift_writes_one_corpus_per_slice() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profiles.toml");
    let drift = dir.path().join("drift.toml");
    std::fs::write(&profile, PROFILES).unwrap();
    std::fs::write(&drift, DRIFT).unwrap();
    let out = dir.path().join("out");
    let v = summary(&run(&[
        "synth", "--profile", s(&profile), "--drift", s(&drift), "--seed", "5", "--out", s(&out),
    ]));
    let slices = v["slices"].as_array().unwrap();
    assert_eq!(slices.len(), 2);
    for sl in slices {
        assert_eq!(sl["articles"], 160);
        let path = sl["corpus"].as_str().unwrap();
        summary(&run(&["validate", path]));
    }
}

#[test]
fn cascade_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("out");
    let common = ["--seed", "6", "--quick", "--folds", "3", "--out", s(&out)];

    let mut args = vec!["cascade", "train", s(&c)];
    args.extend(common);
    let v = summary(&run(&args));
    assert_eq!(v["stages"], 3);
    let cascade = out.join("cascade");
    assert!(cascade.join("spec.toml").exists());

    let v = summary(&run(&["cascade", "predict", s(&c), "--cascade", s(&cascade), "--out", s(&out)]));
    assert_eq!(v["articles"], 160);
    let preds = std::fs::read_to_string(out.join("cascade_predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 160);

    let v = summary(&run(&["cascade", "eval", s(&c), "--cascade", s(&cascade), "--out", s(&out)]));
    assert!(v["report"]["accuracy"].as_f64().unwrap() > 0.5);

    let mut args = vec!["cascade", "eval", s(&c), "--flat"];
    args.extend(common);
    let v = summary(&run(&args));
    assert!(v["report"]["flat_accuracy"].is_number());

    let out2 = run(&["cascade", "eval", s(&c)]);
    assert_eq!(out2.status.code(), Some(2));
}
