use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tierkite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tierkite"))
        .args(args)
        .env("TIERKITE_PROFILE", "laptop")
        .env_remove("TIERKITE_CONFIG")
        .output()
        .unwrap()
}

fn json_ok(args: &[&str]) -> Value {
    let out = tierkite(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?} stdout is not JSON: {e}"))
}

fn write_corpus(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let mut x = i as u64 * 7919 + 3;
        let words: Vec<String> = (0..120)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                format!("t{}", (x >> 36) % 2000)
            })
            .collect();
        std::fs::write(dir.join(format!("doc{i:03}.txt")), format!("{} ident{i}\n", words.join(" "))).unwrap();
    }
}

#[test]
fn offline_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let eng = tmp.path().join("engine");
    write_corpus(&corpus, 300);
    let (c, e) = (corpus.to_str().unwrap(), eng.to_str().unwrap());

    let ing = json_ok(&["ingest", c, e, "--profile-memory"]);
    assert_eq!(ing["chunks"], 300);
    assert!(ing["memory"]["delta_bytes"].is_u64());

    let sp = json_ok(&["index-sparse", e]);
    assert_eq!(sp["doc_count"], 300);

    let dn = json_ok(&["index-dense", e, "--flat", "--nlist", "16"]);
    assert_eq!(dn["vectors"], 300);
    assert!(eng.join("flat.tks").exists());

    let qfile = tmp.path().join("queries.tsv");
    let lines: Vec<String> = (0..25).map(|i| format!("q{i}\tident{i} t5")).collect();
    std::fs::write(&qfile, lines.join("\n")).unwrap();
    let cal = json_ok(&[
        "calibrate",
        "--fp32",
        eng.join("flat.tks").to_str().unwrap(),
        "--q8",
        eng.join("dense.tks").to_str().unwrap(),
        "--queries",
        qfile.to_str().unwrap(),
    ]);
    assert_eq!(cal["per_query"].as_array().unwrap().len(), 25);
    assert!(eng.join("calibration.json").exists());

    let q = json_ok(&["query", e, "--q", "ident42 t7", "-k", "3", "--no-cache"]);
    assert_eq!(q["hits"].as_array().unwrap().len(), 3);
    assert_eq!(q["cache_hit"], false);
    let adaptive = json_ok(&["query", e, "--q", "ident42", "--alpha-mode", "adaptive"]);
    assert!(adaptive["alpha"].as_f64().unwrap() <= 0.5);
    let sparse = json_ok(&["query", e, "--q", "ident42 t7", "--channels", "sparse"]);
    let hits = sparse["hits"].as_array().unwrap();
    assert!(hits[0]["doc_id"].as_str().unwrap().ends_with("doc042.txt"));
    assert!(hits.iter().all(|h| h["channel"] == "sparse"));

    let qrels = tmp.path().join("qrels.tsv");
    let judged: Vec<String> = (0..25).map(|i| format!("q{i}\t{}\t1", corpus.join(format!("doc{i:03}.txt")).display())).collect();
    std::fs::write(&qrels, judged.join("\n")).unwrap();
    let run = tmp.path().join("run.trec");
    let ev = json_ok(&[
        "eval",
        "--qrels",
        qrels.to_str().unwrap(),
        "--engine-dir",
        e,
        "--queries",
        qfile.to_str().unwrap(),
        "--write-run",
        run.to_str().unwrap(),
    ]);
    assert_eq!(ev["queries"], 25);
    assert_eq!(ev["recall"]["20"], 1.0, "{ev}");
    assert!(std::fs::read_to_string(&run).unwrap().lines().count() >= 25);

    let bench = json_ok(&["bench-latency", e, "--queries", qfile.to_str().unwrap(), "--runs", "40"]);
    assert_eq!(bench["runs"], 40);
    assert_eq!(bench["mode"], "warm");
    let cold = json_ok(&["bench-latency", e, "--queries", qfile.to_str().unwrap(), "--runs", "20", "--cold"]);
    assert_eq!(cold["mode"], "cold");
    assert!(cold["cold_start_method"].is_string());
}

#[test]
fn eval_scores_a_run_file() {
    let tmp = tempfile::tempdir().unwrap();
    let qrels = tmp.path().join("qrels");
    let run = tmp.path().join("run");
    std::fs::write(&qrels, "q1 0 a 1\nq2 0 c 2\n").unwrap();
    std::fs::write(&run, "q1 Q0 a 1 2.0 x\nq1 Q0 b 2 1.0 x\nq2 Q0 b 1 3.0 x\nq2 Q0 c 2 2.0 x\n").unwrap();
    let ev = json_ok(&["eval", "--qrels", qrels.to_str().unwrap(), "--run", run.to_str().unwrap()]);
    assert_eq!(ev["queries"], 2);
    assert_eq!(ev["mrr"], 0.75);
}

#[test]
fn bad_profile_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_tierkite"))
        .args(["bench-quant"])
        .env("TIERKITE_PROFILE", "desktop")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("desktop"));
}

#[test]
fn query_on_missing_indexes_reports_not_ready() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tierkite(&["query", tmp.path().to_str().unwrap(), "--q", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not ready"));
}
