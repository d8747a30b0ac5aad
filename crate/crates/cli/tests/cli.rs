use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn wavebank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavebank"))
        .args(args)
        .env("WAVEBANK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wavebank(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(r#"{{"preset": "house", "embed_dim": 8, "proj_dim": 8, "max_epochs": 12, "patience": 12, "eval": "cluster"{extra}}}"#),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_dataset_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("house");
    let stdout = ok(&["synth", "--preset", "house", "--out", s(&out)]);
    assert!(stdout.contains("80 nodes"), "{stdout}");
    assert_eq!(fs::read_to_string(out.join("features.tsv")).unwrap().lines().count(), 80);
    assert_eq!(fs::read_to_string(out.join("labels.tsv")).unwrap().lines().count(), 80);
    assert_eq!(fs::read_to_string(out.join("edges.tsv")).unwrap().lines().count(), 100);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["generation"]["cycle_len"], 30);
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn training_is_reproducible_and_composes_with_eval_cluster() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", &config, "--out", s(&a)]);
    ok(&["train", "--config", &config, "--out", s(&b)]);
    for file in ["metrics.json", "embeddings.tsv", "params.json", "pca.tsv", "config.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let metrics = json(&a.join("metrics.json"));
    assert_eq!(metrics["dataset"]["n_nodes"], 80);
    assert!(metrics["clustering"]["homogeneity"].is_number());
    assert!(metrics["probe"].is_null());
    assert_eq!(metrics["views"].as_array().unwrap().len(), 3);
    assert!(json(&a.join("manifest.json"))["wall_clock_seconds"].is_number());

    // Labels of the generated dataset, then clustering of the saved embeddings.
    let data = tmp.path().join("data");
    ok(&["synth", "--preset", "house", "--out", s(&data)]);
    let eval = tmp.path().join("eval");
    ok(&[
        "eval-cluster",
        "--embeddings",
        s(&a.join("embeddings.tsv")),
        "--labels",
        s(&data.join("labels.tsv")),
        "--out",
        s(&eval),
    ]);
    assert_eq!(json(&eval.join("metrics.json"))["clustering"], metrics["clustering"]);

    // The config echo alone reproduces the run.
    let c = tmp.path().join("c");
    ok(&["train", "--config", s(&a.join("config.json")), "--out", s(&c)]);
    assert_eq!(fs::read(a.join("embeddings.tsv")).unwrap(), fs::read(c.join("embeddings.tsv")).unwrap());

    // Saved parameters regenerate the same embeddings.
    let e = tmp.path().join("embed");
    ok(&["embed", "--config", &config, "--params", s(&a.join("params.json")), "--out", s(&e)]);
    assert_eq!(fs::read(a.join("embeddings.tsv")).unwrap(), fs::read(e.join("embeddings.tsv")).unwrap());

    let p = tmp.path().join("pca");
    ok(&["pca", "--embeddings", s(&a.join("embeddings.tsv")), "--labels", s(&data.join("labels.tsv")), "--out", s(&p)]);
    assert_eq!(fs::read(a.join("pca.tsv")).unwrap(), fs::read(p.join("pca.tsv")).unwrap());
}

#[test]
fn classify_probe_reports_ten_splits() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(tmp.path(), "");
    let run = tmp.path().join("run");
    ok(&["train", "--config", &config, "--eval", "classify", "--out", s(&run)]);
    let probe = &json(&run.join("metrics.json"))["probe"];
    assert_eq!(probe["per_split"].as_array().unwrap().len(), 10);
    let mean = probe["accuracy_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
}

#[test]
fn flags_override_the_config() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(tmp.path(), "");
    let run = tmp.path().join("run");
    ok(&["train", "--config", &config, "--seed", "5", "--k", "2", "--encoder", "shared", "--out", s(&run)]);
    let echo = json(&run.join("config.json"));
    assert_eq!(echo["seed"], 5);
    assert_eq!(echo["k"], 2);
    assert_eq!(echo["encoder_mode"], "shared");
}

#[test]
fn bad_input_fails_with_a_message() {
    let tmp = TempDir::new().unwrap();
    let out = wavebank(&["frobnicate"]);
    assert!(!out.status.success());
    let out = wavebank(&["train", "--bogus-flag"]);
    assert!(!out.status.success());

    let config = small_config(tmp.path(), r#", "alpha": 1.5"#);
    let out = wavebank(&["train", "--config", &config, "--out", s(&tmp.path().join("x"))]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("alpha"), "{stderr}");

    let config = small_config(tmp.path(), r#", "lerning_rate": 0.1"#);
    let out = wavebank(&["train", "--config", &config, "--out", s(&tmp.path().join("y"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lerning_rate"));
}

#[test]
fn filters_report_telescopes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("filters");
    ok(&["filters", "--preset", "varied", "--k", "4", "--out", s(&out)]);
    let report = json(&out.join("filters.json"));
    assert_eq!(report["filters"].as_array().unwrap().len(), 4);
    assert!(report["telescoping_error"].as_f64().unwrap() < 1e-9);
    assert_eq!(report["filters"][2]["scale"], 4);
}

#[test]
fn homophily_of_a_labelled_directory() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("triangle");
    fs::create_dir(&dir).unwrap();
    fs::write(dir.join("edges.tsv"), "0\t1\n1\t2\n2\t0\n").unwrap();
    fs::write(dir.join("features.tsv"), "1\n1\n1\n").unwrap();
    fs::write(dir.join("labels.tsv"), "4\n4\n4\n").unwrap();
    let stdout = ok(&["homophily", "--dataset", s(&dir)]);
    let score: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(score["value"], 1.0);
}

#[test]
fn ablation_writes_one_row_per_k() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(tmp.path(), "");
    let out = tmp.path().join("ablate");
    ok(&["ablate", "--config", &config, "--k", "1,2", "--out", s(&out)]);
    let table = fs::read_to_string(out.join("ablation.tsv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(out.join("k1/metrics.json").exists() && out.join("k2/metrics.json").exists());
    let rows = &json(&out.join("metrics.json"))["ablation"];
    assert_eq!(rows[0]["n_views"], 2);
    assert_eq!(rows[1]["n_views"], 3);
}
