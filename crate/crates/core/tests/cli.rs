use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn grouper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grouper")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn write_corpus(path: &Path) {
    let mut lines = String::new();
    for i in 0..200 {
        lines.push_str(&format!(
            "{{\"domain\": \"d{}\", \"text\": \"word{} and some more words {}\"}}\n",
            i % 7,
            i % 13,
            i
        ));
    }
    fs::write(path, lines).unwrap();
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    ok(&grouper(&[
        "synth", "--clients", "24", "--vocab", "12", "--alpha", "0.5", "--seed", "3", "--out", s(&data),
    ]));
    data
}

#[test]
fn partition_writes_shards_manifest_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("corpus.jsonl");
    write_corpus(&input);
    let out = dir.path().join("d");
    ok(&grouper(&[
        "partition", "--input", s(&input), "--strategy", "by_feature", "--feature", "domain", "--shards", "3",
        "--out", s(&out),
    ]));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["num_shards"], 3);
    assert_eq!(manifest["num_groups"], 7);
    assert_eq!(manifest["num_examples"], 200);
    let echo = json(&out.join("config.json"));
    assert_eq!(echo["partition"]["strategy"]["feature"], "domain");
    assert_eq!(echo["format"], "jsonl");

    let stats = dir.path().join("s");
    ok(&grouper(&["stats", "--data", s(&out), "--out", s(&stats)]));
    for f in ["group_stats.csv", "summary.csv", "letter_values.csv", "config.json"] {
        assert!(stats.join(f).exists(), "{f} missing");
    }
    let rows = fs::read_to_string(stats.join("group_stats.csv")).unwrap();
    assert_eq!(rows.lines().count(), 8);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("corpus.jsonl");
    write_corpus(&input);
    let config = dir.path().join("c.json");
    fs::write(
        &config,
        format!(
            r#"{{"input": "{}", "strategy": {{"kind": "random", "num_groups": 5}}, "num_shards": 2, "seed": 4}}"#,
            s(&input)
        ),
    )
    .unwrap();
    let out = dir.path().join("d");
    ok(&grouper(&["partition", "--config", s(&config), "--shards", "4", "--out", s(&out)]));
    let echo = json(&out.join("config.json"));
    assert_eq!(echo["partition"]["num_shards"], 4);
    assert_eq!(echo["partition"]["seed"], 4);
    assert_eq!(echo["partition"]["strategy"]["num_groups"], 5);
}

#[test]
fn unknown_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"data": "x", "backends": ["streaming"], "bogus": 1}"#).unwrap();
    let out = grouper(&["bench", "--config", s(&config), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "invalid_config");
    assert!(err["message"].as_str().unwrap().contains("bogus"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(grouper(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(grouper(&["train", "--rounds", "x", "--out", "o"]).status.code(), Some(2));
    assert_eq!(grouper(&["--help"]).status.code(), Some(0));
}

#[test]
fn non_empty_out_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = grouper(&["synth", "--clients", "4", "--alpha", "1", "--out", s(&data)]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert!(err["message"].as_str().unwrap().contains("--force"));
    fs::write(data.join("stale.txt"), "x").unwrap();
    ok(&grouper(&["synth", "--clients", "4", "--vocab", "8", "--alpha", "1", "--force", "--out", s(&data)]));
    assert!(!data.join("stale.txt").exists());
    assert_eq!(json(&data.join("manifest.json"))["num_groups"], 4);
}

#[test]
fn train_personalize_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let train_args = |out: &Path| {
        vec![
            "train".to_owned(),
            "--data".into(),
            s(&data).into(),
            "--algo".into(),
            "fedavg".into(),
            "--cohort".into(),
            "4".into(),
            "--tau".into(),
            "4".into(),
            "--rounds".into(),
            "12".into(),
            "--schedule".into(),
            "warmup_cosine".into(),
            "--vocab".into(),
            "12".into(),
            "--seq-len".into(),
            "17".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let args = train_args(out);
        ok(&grouper(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    let metrics = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(metrics).unwrap();
    assert_eq!(text.lines().next(), Some("round,algorithm,lr,mean_loss"));
    assert_eq!(text.lines().count(), 13);
    assert!(text.lines().nth(1).unwrap().starts_with("0,fedavg,0,"));
    let header = json(&a.join("checkpoint/checkpoint.json"));
    assert_eq!(header["dimension"], 144);
    assert_eq!(header["step"], 12);
    assert_eq!(fs::metadata(a.join("checkpoint/params.bin")).unwrap().len(), 144 * 8);
    assert_eq!(json(&a.join("config.json"))["algorithm"], "fedavg");

    let p = dir.path().join("p");
    ok(&grouper(&[
        "personalize", "--data", s(&data), "--checkpoint", s(&a.join("checkpoint")), "--client-lr", "0.1",
        "--out", s(&p),
    ]));
    let rows = fs::read_to_string(p.join("personalization.csv")).unwrap();
    assert!(rows.starts_with("client_key,pre_loss,post_loss\n"));
    assert_eq!(rows.lines().count(), 25);
    assert_eq!(json(&p.join("personalization_summary.json"))["num_clients"], 24);

    let sw = dir.path().join("sw");
    ok(&grouper(&[
        "sweep", "--data", s(&data), "--algo", "fedsgd", "--rounds", "5", "--cohort", "4", "--tau", "2", "--vocab",
        "12", "--seq-len", "17", "--server-lrs", "0.01,0.1", "--out", s(&sw),
    ]));
    // FedSGD has no client rate to tune, so only the server grid is swept.
    assert_eq!(fs::read_to_string(sw.join("sweep.csv")).unwrap().lines().count(), 3);
    assert!(json(&sw.join("best.json"))["server_lr"].is_number());
}

#[test]
fn bench_writes_report_and_trials() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = dir.path().join("r");
    ok(&grouper(&["bench", "--data", s(&data), "--backend", "all", "--trials", "2", "--out", s(&out)]));
    let reports = json(&out.join("bench_report.json"));
    assert_eq!(reports.as_array().unwrap().len(), 3);
    for r in reports.as_array().unwrap() {
        assert_eq!(r["trials"].as_array().unwrap().len(), 2);
    }
    let trials = fs::read_to_string(out.join("bench_trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 7);
}
