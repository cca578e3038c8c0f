use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cityadapt::pipeline::{sha256_file, Manifest, MetricsReport};

fn cityadapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cityadapt"))
        .args(args)
        .env_remove("CITYADAPT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "seed = 5\nholdout_per_city = 20\n\n[synth]\nn_cities = 10\nn_urban = 4\n\n[model.stage1]\nepochs = 4\n\n[model.stage2]\nepochs = 4\n\n[adapt]\nepochs = 3\n",
    )
    .unwrap();
    cfg
}

#[test]
fn synth_is_deterministic_and_creates_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("x/a"), dir.path().join("b"));
    assert!(cityadapt(&["synth", "--seed", "7", "--out", p(&a)]).status.success());
    assert!(cityadapt(&["synth", "--seed", "7", "--out", p(&b)]).status.success());
    for f in ["tweets.jsonl", "cities.csv", "holdout.jsonl"] {
        assert_eq!(sha256_file(&a.join(f)).unwrap(), sha256_file(&b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_config_field_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[adapt]\ngamma = -1.0\n").unwrap();
    let out = cityadapt(&["synth", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    fs::write(&cfg, "[synth]\nbogus_field = 1\n").unwrap();
    let out = cityadapt(&["synth", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_field"));
}

#[test]
fn malformed_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cityadapt(&["synth", "--out", p(dir.path())]).status.success());
    let tweets = dir.path().join("broken.jsonl");
    fs::write(&tweets, "{\"tweet_id\": \"t1\", \"city_id\": 3}\n").unwrap();
    let out = cityadapt(&["ingest", "--tweets", p(&tweets), "--cities", p(&dir.path().join("cities.csv")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cityadapt"))
        .args(["synth"])
        .env("CITYADAPT_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("tweets.jsonl").exists());
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_small_config(d);
    let run = |args: &[&str]| {
        let mut all = vec!["--config", p(&cfg)];
        all.extend_from_slice(args);
        let out = cityadapt(&all);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--out", p(&d.join("data"))]);
    let tweets = d.join("data/tweets.jsonl");
    let cities = d.join("data/cities.csv");
    let common = ["--tweets", p(&tweets), "--cities", p(&cities)];
    run(&[&common[..], &["vif", "--out", p(&d.join("vif"))]].concat());
    run(&[&common[..], &["train-cities", "--out", p(&d.join("enc"))]].concat());
    let emb = d.join("enc/city_embeddings.csv");
    run(&["index", "--embeddings", p(&emb), "--k", "3", "--out", p(&d.join("idx"))]);
    run(&[&common[..], &["train-global", "--out", p(&d.join("g"))]].concat());
    let global = d.join("g/checkpoints/global.json");
    run(&[&common[..], &["adapt", "--global", p(&global), "--embeddings", p(&emb), "--out", p(&d.join("ad"))]].concat());
    let holdout = d.join("data/holdout.jsonl");
    let city_models = d.join("ad/checkpoints/cities");
    run(&[
        "--tweets",
        p(&holdout),
        "evaluate",
        "--global",
        p(&global),
        "--city-models",
        p(&city_models),
        "--out",
        p(&d.join("ev")),
    ]);
    let preds = d.join("ev/predictions.csv");
    run(&["--tweets", p(&holdout), "acc-sentiment", "--predictions", p(&preds), "--out", p(&d.join("acc"))]);
    run(&[&common[..], &["correlate", "--out", p(&d.join("corr"))]].concat());

    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(d.join("ev/metrics.json")).unwrap()).unwrap();
    let names: Vec<_> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["Global-Fusion", "City-Specific-Fusion"]);
    let neighbors = fs::read_to_string(d.join("idx/neighbors.csv")).unwrap();
    assert_eq!(neighbors.lines().count(), 1 + 10 * 3);
    assert!(fs::read_to_string(d.join("acc/acc_sentiment.csv")).unwrap().starts_with("city_id,day,acc_sentiment"));
}

#[test]
fn pipeline_pure_text_rows_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_small_config(d);
    let (a, b) = (d.join("a"), d.join("b"));
    let out = cityadapt(&["--config", p(&cfg), "--out", p(&a), "pipeline", "--pure-text"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    let names: Vec<_> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(names, ["Global-Pure-Text", "City-Specific-Pure-Text"]);

    let manifest = Manifest::load(a.join("manifest.json")).unwrap();
    assert_eq!(report.config_hash, manifest.config_hash);
    for (rel, sha) in &manifest.artifacts {
        assert_eq!(&sha256_file(&a.join(rel)).unwrap(), sha, "{rel}");
    }
    for f in ["acc_sentiment.csv", "label_distribution.csv", "correlation.csv", "neighbors.csv", "predictions.csv"] {
        assert!(manifest.artifacts.contains_key(f), "{f} missing");
    }

    let out = cityadapt(&["--out", p(&b), "pipeline", "--from-manifest", p(&a.join("manifest.json"))]);
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
}

#[test]
fn ablation_emits_exactly_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path());
    let out = cityadapt(&[
        "--config",
        p(&cfg),
        "--out",
        p(dir.path()),
        "ablation",
        "--variants",
        "Global-Fusion,Freeze-Encoders",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["Global-Fusion", "Freeze-Encoders"]);
}

#[test]
fn pipeline_on_file_corpus_holds_out_gold() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_small_config(d);
    assert!(cityadapt(&["--config", p(&cfg), "--out", p(&d.join("data")), "synth"]).status.success());
    let out = cityadapt(&[
        "--config",
        p(&cfg),
        "--tweets",
        p(&d.join("data/tweets.jsonl")),
        "--cities",
        p(&d.join("data/cities.csv")),
        "--out",
        p(&d.join("run")),
        "pipeline",
        "--global-only",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(d.join("run/metrics.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.adapted_cities, 0);
    assert!(report.rows[0].n > 0);
    assert!(!d.join("run/corpus").exists());
}
