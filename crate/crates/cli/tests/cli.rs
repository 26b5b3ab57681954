use std::path::Path;
use std::process::{Command, Output};

use opfuse::dataset::{Corpus, Emotion};
use opfuse::eval::{write_predictions, Prediction};
use opfuse::synthetic::{planted_corpus, PlantedConfig};
use serde_json::Value;

fn opfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opfuse")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn pred(i: usize, gold: Emotion, pred: Emotion) -> Prediction {
    Prediction {
        id: format!("r{i}"),
        gold,
        pred,
        logits: vec![],
    }
}

fn write(path: &Path, preds: &[Prediction]) {
    let mut f = std::fs::File::create(path).unwrap();
    write_predictions(&mut f, preds).unwrap();
}

/// A correct on 10 records where B is wrong, the reverse on 2, both right on 5.
fn discordant_pair(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..17 {
        let (pa, pb) = match i {
            0..10 => (Emotion::Anger, Emotion::Panic),
            10..12 => (Emotion::Panic, Emotion::Anger),
            _ => (Emotion::Anger, Emotion::Anger),
        };
        a.push(pred(i, Emotion::Anger, pa));
        b.push(pred(i, Emotion::Anger, pb));
    }
    let (pa, pb) = (dir.join("a.jsonl"), dir.join("b.jsonl"));
    write(&pa, &a);
    write(&pb, &b);
    (pa, pb)
}

#[test]
fn compare_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = discordant_pair(dir.path());
    let v = json(&opfuse(&["compare", "--pred-a", s(&a), "--pred-b", s(&a)]));
    assert_eq!(v["mcnemar"]["exact_p_value"], 1.0);
    assert_eq!(v["stuart_maxwell"]["p_value"], 1.0);
}

#[test]
fn compare_ten_two() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = discordant_pair(dir.path());
    let v = json(&opfuse(&["compare", "--pred-a", s(&a), "--pred-b", s(&b)]));
    assert_eq!(v["mcnemar"]["b"], 10);
    assert_eq!(v["mcnemar"]["c"], 2);
    assert!((v["mcnemar"]["statistic"].as_f64().unwrap() - 16.0 / 3.0).abs() < 1e-12);
}

#[test]
fn compare_disjoint_ids_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = discordant_pair(dir.path());
    let other = dir.path().join("c.jsonl");
    write(&other, &[pred(99, Emotion::Belief, Emotion::Belief)]);
    let o = opfuse(&["compare", "--pred-a", s(&a), "--pred-b", s(&other)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r99"));
}

#[test]
fn out_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = discordant_pair(dir.path());
    let out = dir.path().join("report.json");
    let o = opfuse(&["compare", "--pred-a", s(&a), "--pred-b", s(&b), "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&out).unwrap(), o.stdout);
    let out = dir.path().join("stats.json");
    let o = opfuse(&["stats", "--chi2", "3.841", "--df", "1", "--out", s(&out)]);
    assert_eq!(std::fs::read(&out).unwrap(), o.stdout);
}

#[test]
fn stats_table() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    std::fs::write(&t, "20,10,5\n3,30,15\n2,5,40\n").unwrap();
    let v = json(&opfuse(&["stats", "--table", s(&t)]));
    assert_eq!(v["stuart_maxwell"]["df"], 2);
    std::fs::write(&t, "1,x\n2,3\n").unwrap();
    assert_eq!(opfuse(&["stats", "--table", s(&t)]).status.code(), Some(2));
}

#[test]
fn ingest_empty_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("e.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = opfuse(&["ingest", "--data", s(&empty)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("0 records"));
    let o = opfuse(&["ingest", "--data", s(&dir.path().join("nope.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_eval_aggregate_export() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let data = p.join("d.jsonl");
    Corpus::new(planted_corpus(&PlantedConfig {
        train: 40,
        dev: 16,
        test: 16,
        ..Default::default()
    }))
    .save(&data)
    .unwrap();
    let cfg = p.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"encoder":{"provider":"toy","width":16,"layers":1,"heads":2,"buckets":256},
            "gat":{"out_dim":8,"heads":2},"fusion":"gate","optim":{"epochs":2,"batch_size":8}}"#,
    )
    .unwrap();
    let out = p.join("run");
    let v = json(&opfuse(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]));
    assert!(v["best_epoch"].as_u64().unwrap() >= 1);
    for f in ["checkpoint.bin", "config.json", "train_log.csv", "dev_predictions.jsonl"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,dev_macro_f1\n"));

    let preds = p.join("test.jsonl");
    let csv = p.join("f1.csv");
    let v = json(&opfuse(&[
        "eval",
        "--config",
        s(&out.join("config.json")),
        "--checkpoint",
        s(&out.join("checkpoint.bin")),
        "--data",
        s(&data),
        "--split",
        "test",
        "--predictions",
        s(&preds),
        "--csv",
        s(&csv),
    ]));
    assert_eq!(v["n"], 16);
    let rescored = json(&opfuse(&["eval", "--pred", s(&preds)]));
    assert_eq!(rescored["macro_f1"], v["macro_f1"]);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("taxonomy,label,precision,recall,f1,support"));

    let agg_csv = p.join("agg.csv");
    let v = json(&opfuse(&[
        "aggregate", "--pred", s(&preds), "--map", "ekman6", "--map", "valence3", "--csv", s(&agg_csv),
    ]));
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[1]["map"], "valence3");
    let rows = std::fs::read_to_string(&agg_csv).unwrap();
    assert!(rows.lines().any(|l| l.starts_with("valence3,positive,")));
    assert!(rows.lines().any(|l| l.starts_with("emotion12,anger,")));

    let o = opfuse(&["export-graphs", "--data", s(&data), "--config", s(&cfg)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 72);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let g = &first["graphs"][0];
    assert!(g["nodes"].as_array().unwrap().iter().any(|n| n["role"] == "sentiment"));
    assert!(g["edges"].as_array().unwrap().len() >= 2);
}

#[test]
fn sweep_budget_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let data = p.join("d.jsonl");
    Corpus::new(planted_corpus(&PlantedConfig {
        train: 24,
        dev: 8,
        ..Default::default()
    }))
    .save(&data)
    .unwrap();
    let cfg = p.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"encoder":{"provider":"toy","width":16,"layers":1,"heads":2,"buckets":256},"optim":{"epochs":1}}"#,
    )
    .unwrap();
    let out = p.join("trials.csv");
    let o = opfuse(&["sweep", "--config", s(&cfg), "--data", s(&data), "--budget", "1", "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("trial,config_json,dev_macro_f1,best_epoch\n"));
    let o = opfuse(&["sweep", "--config", s(&cfg), "--data", s(&data), "--budget", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"fusion":"gate","alpha":0.5}"#).unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, "").unwrap();
    let o = opfuse(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`alpha`"));
}
