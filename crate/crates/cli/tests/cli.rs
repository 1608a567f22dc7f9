use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[experiment]
seed = 3
rounds = 1
random_count = 8
candidate_pool = 20
heldout_count = 4
workers = 2

[env]
name = "reach"

[evaluators]
mode = "scripted"

[synthesis]
foresight = true
foresight_count = 12
hindsight = true

[reward]
batch_size = 8
epochs = 2
hidden = [8]
ensemble_size = 2
reward_input = "state"
queries_per_round = 8
"#;

fn preffuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_preffuse"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = preffuse(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

#[test]
fn stepwise_subcommands_chain() {
    let dir = setup();
    let d = dir.path();
    let cfg = ["--config", "small.toml"];

    ok(d, &[&cfg[..], &["--out", "gen", "synthesize", "--mode", "foresight", "--count", "10"]].concat());
    assert_eq!(line_count(&d.join("gen/foresight.jsonl")), 10);

    ok(d, &[&cfg[..], &["--out", "kf", "extract-keyframes", "--input", "gen/foresight.jsonl"]].concat());
    let kf = fs::read_to_string(d.join("kf/keyframes.jsonl")).unwrap();
    for l in kf.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        let idx = v["keyframes"].as_array().unwrap();
        assert_eq!(idx[0], 1);
    }

    ok(d, &[&cfg[..], &["--out", "fz", "fuse", "--trajectories", "gen/foresight.jsonl"]].concat());
    assert_eq!(line_count(&d.join("fz/preferences.jsonl")), 5);

    ok(d, &[&cfg[..], &["--out", "cf", "synthesize", "--mode", "hindsight", "--input", "gen/foresight.jsonl"]].concat());
    assert!(d.join("cf/counterfactuals.jsonl").exists());

    let out = ok(
        d,
        &[
            &cfg[..],
            &[
                "--out",
                "tr",
                "train-reward",
                "--preferences",
                "fz/preferences.jsonl",
                "--counterfactuals",
                "cf/counterfactuals.jsonl",
                "--trajectories",
                "gen/foresight.jsonl",
                "cf/counterfactual_trajectories.jsonl",
            ],
        ]
        .concat(),
    );
    assert!(out.contains("trained on"), "{out}");
    assert!(d.join("tr/reward_checkpoint.json").exists());
    assert!(d.join("tr/metrics.csv").exists());
}

#[test]
fn run_is_idempotent_and_reportable() {
    let dir = setup();
    let d = dir.path();
    let first = ok(d, &["--config", "small.toml", "--out", "a", "run"]);
    assert!(first.contains("final spearman"), "{first}");
    let report = fs::read(d.join("a/report.json")).unwrap();
    ok(d, &["--config", "small.toml", "--out", "a", "run"]);
    assert_eq!(report, fs::read(d.join("a/report.json")).unwrap());

    ok(d, &["--config", "small.toml", "--workers", "1", "--out", "b", "run"]);
    assert_eq!(report, fs::read(d.join("b/report.json")).unwrap());

    let summary = ok(d, &["report", "a"]);
    assert!(!summary.trim().is_empty());
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["--config", "small.toml", "--out", "a", "synthesize", "--mode", "foresight"]);
    ok(d, &["--config", "small.toml", "--seed", "4", "--out", "b", "synthesize", "--mode", "foresight"]);
    assert_ne!(fs::read(d.join("a/foresight.jsonl")).unwrap(), fs::read(d.join("b/foresight.jsonl")).unwrap());
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[experiment]\nrounds = \"many\"\n").unwrap();
    fs::write(d.join("one.jsonl"), "").unwrap();

    let cases: [&[&str]; 5] = [
        &["--config", "missing.toml", "run"],
        &["--config", "bad.toml", "run"],
        &["--config", "small.toml", "extract-keyframes", "--input", "nope.jsonl"],
        &["--config", "small.toml", "fuse", "--trajectories", "one.jsonl"],
        &["report", "no-such-run"],
    ];
    for args in cases {
        let o = preffuse(d, args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.starts_with("error: "), "{args:?}: {err}");
    }
}

#[test]
fn usage_errors_are_rejected_by_the_parser() {
    let dir = setup();
    let d = dir.path();
    for args in [
        &["synthesize", "--mode", "hindsight"][..],
        &["synthesize", "--mode", "sideways"],
        &["train-reward", "--preferences", "p.jsonl"],
        &["fly"],
    ] {
        let o = preffuse(d, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unknown_env_is_reported() {
    let dir = setup();
    let o = preffuse(dir.path(), &["synthesize", "--mode", "foresight", "--env", "moon"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("moon"));
}
