use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn anticomp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anticomp"))
        .args(args)
        .env_remove("ANTICOMP_OUT_ROOT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = anticomp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: &str) {
    ok(&["gen-data", "--count", count, "--seed", "3", "--out", s(dir)]);
}

#[test]
fn gen_data_writes_the_requested_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "10");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 10);
    let mixed = tmp.path().join("mixed");
    ok(&["gen-data", "--count", "10", "--mixed-hq-quality", "100", "--out", s(&mixed)]);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(mixed.join("manifest.json")).unwrap()).unwrap();
    let raw = m["entries"].as_array().unwrap().iter().filter(|e| e["hqQuality"] == 100).count();
    assert_eq!(raw, 5);
    fs::remove_dir_all(&mixed).unwrap();
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "gen-data");
    assert_eq!(run["seed"], 3);
    assert_eq!(run["configSha256"].as_str().unwrap().len(), 64);
    // Nothing lands next to the output directory.
    let siblings: Vec<_> = fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(siblings.len(), 1);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(anticomp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(anticomp(&["gen-data", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(anticomp(&[]).status.code(), Some(2));
}

#[test]
fn invalid_configs_exit_1_with_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "10");
    for (body, field) in [
        (r#"{"batchSize": 7}"#, "batchSize"),
        (r#"{"learningRate": -1}"#, "learningRate"),
        (r#"{"lossWeights": {"rMinus": 20}}"#, "rMinus"),
        (r#"{"notAField": 1}"#, "notAField"),
    ] {
        let cfg = tmp.path().join("cfg.json");
        fs::write(&cfg, body).unwrap();
        let out = anticomp(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&tmp.path().join("t"))]);
        assert_eq!(out.status.code(), Some(1), "{body}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(field), "{body}: {err}");
    }
    let out = anticomp(&["gen-data", "--hq-quality", "20", "--lq-quality", "30", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hqQuality"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(anticomp(&["gen-data", "--count", "4"]).status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_anticomp"))
        .args(["gen-data", "--count", "4"])
        .env("ANTICOMP_OUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("data/manifest.json").exists());
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (d1, d2) = (root.join("d1"), root.join("d2"));
    gen(&d1, "40");
    gen(&d2, "40");
    for f in ["manifest.json", "hq/pair00011.png", "lq/pair00011.png", "mask/pair00011.png"] {
        assert_eq!(fs::read(d1.join(f)).unwrap(), fs::read(d2.join(f)).unwrap(), "{f}");
    }

    let cfg = root.join("train.json");
    fs::write(&cfg, r#"{"maxEpochs": 1, "batchSize": 8, "seed": 5}"#).unwrap();
    let (t1, t2) = (root.join("t1"), root.join("t2"));
    for t in [&t1, &t2] {
        ok(&["train", "--config", s(&cfg), "--data", s(&d1), "--out", s(t)]);
    }
    for f in ["checkpoint.json", "train_log.jsonl", "history.json"] {
        assert_eq!(fs::read(t1.join(f)).unwrap(), fs::read(t2.join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(t1.join("train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["total", "dis", "gan", "at", "discriminatorLoss"] {
        assert!(first[key].is_number(), "{key}");
    }

    let ck = t1.join("checkpoint.json");
    let (r1, r2) = (root.join("e1/report.json"), root.join("e2/report.json"));
    for r in [&r1, &r2] {
        ok(&["eval", "--checkpoint", s(&ck), "--data", s(&d1), "--branch", "low", "--report", s(r)]);
    }
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r1).unwrap()).unwrap();
    for key in ["acc", "auc", "tarAt0p1", "tarAt0p01", "pbca", "counts"] {
        assert!(report.get(key).is_some(), "{key}");
    }
    assert!(root.join("e1/run.json").exists());

    let maps = root.join("maps");
    ok(&["attn-maps", "--checkpoint", s(&ck), "--data", s(&d1), "--ids", "pair00001,pair00002", "--out", s(&maps)]);
    assert!(maps.join("pair00001.png").exists() && maps.join("pair00002.png").exists());

    let emb = root.join("x/emb.csv");
    ok(&["export-embeddings", "--checkpoint", s(&ck), "--data", s(&d1), "--out", s(&emb)]);
    let text = fs::read_to_string(&emb).unwrap();
    assert!(text.starts_with("id,label,e0,"));

    let hist = root.join("x/hist.csv");
    ok(&["export-histograms", "--checkpoint", s(&ck), "--data", s(&d1), "--bin-width", "1", "--out", s(&hist)]);
    assert!(fs::read_to_string(&hist).unwrap().starts_with("binStart,binEnd,real,fake"));
}

#[test]
fn ablate_runs_selected_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "40");
    let matrix = tmp.path().join("matrix.json");
    let out = tmp.path().join("abl");
    fs::write(
        &matrix,
        serde_json::json!({
            "data": data,
            "base": {"maxEpochs": 1, "batchSize": 8},
            "rows": ["single-ce", "4", "9", "11"],
        })
        .to_string(),
    )
    .unwrap();
    ok(&["ablate", "--matrix", s(&matrix), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "No,Name,ACC,AUC,TAR0.1,TAR0.01,PBCA");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,single-ce,"));
    assert!(lines[2].starts_with("4,single-metric-attention-hq,"));
    assert!(lines[3].starts_with("9,full,"));
    assert!(lines[4].starts_with("11,full-mixed-pairs,"));
}
