mod common;

use std::fs;

use common::*;
use ppi_affinity::regressor::{AffinityModel, MlpHead, SourceSpec};
use ppi_affinity::splitter::SplitAssignment;
use ppi_affinity::synthetic::{linear, planted_families, two_source};

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = cli(&["split", "--dataset", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn bad_flags_exit_with_two() {
    let out = cli(&["split", "--dataset", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_rows_are_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "id,chains,pkd,kd_molar,pmid\na,ACDE,5,,1\nb,AC*E,5,,1\n").unwrap();
    let out = cli(&["split", "--dataset", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains('*'), "{err}");
}

#[test]
fn split_writes_split_audit_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("planted.csv");
    write_dataset(&planted_families(60, 4, 2), &data);
    let out = dir.path().join("run");
    ok(&["split", "--dataset", s(&data), "--tau", "20", "--test-ratio", "0.4", "--cap", "1.2", "--out", s(&out)]);
    let split = SplitAssignment::read(&out.join("split.json")).unwrap();
    assert!(split.test.len() as f64 <= 1.2 * 0.4 * 60.0);
    let audit = read_json(&out.join("leakage_audit.json"));
    assert_eq!(audit["pairs_within_tau"], 0);
    assert_eq!(audit["passed"], true);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("tau = 20"));
}

#[test]
fn tau_zero_gives_singleton_components() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("planted.csv");
    let ds = planted_families(20, 1, 4);
    write_dataset(&ds, &data);
    let out = dir.path().join("run");
    ok(&["split", "--dataset", s(&data), "--tau", "0", "--out", s(&out)]);
    let split = SplitAssignment::read(&out.join("split.json")).unwrap();
    assert_eq!(split.components.len(), 20);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("planted.csv");
    write_dataset(&planted_families(40, 4, 8), &data);
    let first = dir.path().join("first");
    ok(&["split", "--dataset", s(&data), "--tau", "15", "--val-fraction", "0.2", "--out", s(&first)]);
    let second = dir.path().join("second");
    ok(&["split", "--config", s(&first.join("config.resolved")), "--out", s(&second)]);
    assert_eq!(snapshot(&first), snapshot(&second));
}

#[test]
fn fuse_rejects_a_single_table() {
    let dir = tempfile::tempdir().unwrap();
    let fx = linear(40, 4, 0.1, 4, 1);
    let data = dir.path().join("lin.csv");
    let emb = dir.path().join("emb.bin");
    write_dataset(&fx.dataset, &data);
    write_table(&fx.table, &emb);
    let out = cli(&[
        "fuse",
        "--dataset",
        s(&data),
        "--embeddings",
        &format!("only={}", s(&emb)),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2"));
}

#[test]
fn fusion_is_insensitive_to_source_order() {
    let dir = tempfile::tempdir().unwrap();
    let fx = two_source(300, 0.1, 10, 5);
    let data = dir.path().join("two.csv");
    let a = dir.path().join("structure.bin");
    let b = dir.path().join("sequence.bin");
    write_dataset(&fx.dataset, &data);
    write_table(&fx.first, &a);
    write_table(&fx.second, &b);
    let ea = format!("structure={}", s(&a));
    let eb = format!("sequence={}", s(&b));
    let common = ["--dataset", s(&data), "--tau", "2", "--epochs", "150", "--lr", "0.01", "--seed", "3"];

    let ab = dir.path().join("ab");
    let mut args = vec!["fuse", "--embeddings", &ea, "--embeddings", &eb, "--out", s(&ab)];
    args.extend_from_slice(&common);
    ok(&args);
    let ba = dir.path().join("ba");
    let mut args = vec!["fuse", "--embeddings", &eb, "--embeddings", &ea, "--out", s(&ba)];
    args.extend_from_slice(&common);
    ok(&args);

    let pa = read_json(&ab.join("fusion_report.json"))["fused"]["pearson"].as_f64().unwrap();
    let pb = read_json(&ba.join("fusion_report.json"))["fused"]["pearson"].as_f64().unwrap();
    assert!((pa - pb).abs() <= 0.02, "{pa} vs {pb}");
}

#[test]
fn eval_matches_library_evaluation_and_appends_results() {
    let dir = tempfile::tempdir().unwrap();
    let fx = linear(120, 4, 0.1, 6, 2);
    let data = dir.path().join("lin.csv");
    let emb = dir.path().join("emb.bin");
    write_dataset(&fx.dataset, &data);
    write_table(&fx.table, &emb);
    let e = format!("embedding={}", s(&emb));
    let model = dir.path().join("model");
    ok(&["train", "--dataset", s(&data), "--tau", "2", "--embeddings", &e, "--epochs", "20", "--out", s(&model)]);
    let split_file = model.join("split.json");
    let results = dir.path().join("results.csv");
    for side in ["test", "train"] {
        let out = ok(&[
            "eval",
            "--dataset",
            s(&data),
            "--split",
            s(&split_file),
            "--checkpoint",
            s(&model),
            "--embeddings",
            &e,
            "--on",
            side,
            "--results",
            s(&results),
            "--out",
            s(&dir.path().join(format!("eval-{side}"))),
        ]);
        let warned = String::from_utf8_lossy(&out.stderr).contains("TRAINING split");
        assert_eq!(warned, side == "train");
    }
    let rows = fs::read_to_string(&results).unwrap();
    assert_eq!(rows.lines().count(), 3);

    // Recompute from predictions.csv with the library.
    let eval_dir = dir.path().join("eval-test");
    let mut preds = std::collections::BTreeMap::new();
    let mut labels = std::collections::BTreeMap::new();
    for line in fs::read_to_string(eval_dir.join("predictions.csv")).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        labels.insert(f[0].to_string(), f[1].parse::<f64>().unwrap());
        preds.insert(f[0].to_string(), f[2].parse::<f64>().unwrap());
    }
    let lib = ppi_affinity::metrics::evaluate(&preds, &labels).unwrap().report;
    let doc: ppi_affinity_cli::EvalDoc =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(doc.pearson, lib.pearson);
    assert_eq!(doc.spearman, lib.spearman);
    assert_eq!(doc.rmse, lib.rmse);
}

#[test]
fn perfect_predictions_score_perfectly() {
    // Checkpoint holding the generating weights of noise-free linear labels.
    let dir = tempfile::tempdir().unwrap();
    let fx = linear(80, 3, 0.0, 4, 6);
    let data = dir.path().join("lin.csv");
    let emb = dir.path().join("emb.csv");
    write_dataset(&fx.dataset, &data);
    let mut rows = String::new();
    for id in fx.table.ids() {
        let v: Vec<String> = fx.table.get(id).unwrap().iter().map(f64::to_string).collect();
        rows.push_str(&format!("{id},{}\n", v.join(",")));
    }
    fs::write(&emb, rows).unwrap();
    let model = AffinityModel {
        sources: vec![SourceSpec { name: "embedding".into(), dim: 3 }],
        standardizer: None,
        head: MlpHead::from_parts(vec![3, 1], vec![fx.weights.clone()], vec![vec![5.0]]).unwrap(),
    };
    let ckpt = dir.path().join("model");
    model.write_checkpoint(&ckpt).unwrap();
    let split_dir = dir.path().join("split");
    ok(&["split", "--dataset", s(&data), "--tau", "2", "--out", s(&split_dir)]);

    let eval_dir = dir.path().join("eval");
    ok(&[
        "eval", "--dataset", s(&data), "--split", s(&split_dir.join("split.json")), "--checkpoint", s(&ckpt),
        "--embeddings", &format!("embedding={}", s(&emb)), "--out", s(&eval_dir),
    ]);
    let doc = read_json(&eval_dir.join("eval.json"));
    assert!((doc["pearson"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((doc["spearman"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(doc["rmse"].as_f64().unwrap() < 1e-12);
}
