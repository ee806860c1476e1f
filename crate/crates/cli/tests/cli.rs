use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wproc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wproc"))
        .current_dir(dir)
        .args(args)
        .env_remove("WPROC_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = wproc(dir, args);
    assert!(out.status.success(), "wproc {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A small synthetic pair in a fresh directory: src.vec, tgt.vec, truth.txt.
fn synthetic() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["--threads", "1", "synth", "--n", "300", "--d", "8", "--decay", "2", "--locality", "20", "--out-dir", "."],
    );
    dir
}

const INPUTS: [&str; 4] = ["--src", "src.vec", "--tgt", "tgt.vec"];

fn with_inputs<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    [&["--threads", "1", cmd][..], &INPUTS, rest].concat()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_outputs_have_the_documented_shapes() {
    let dir = synthetic();
    let d = dir.path();
    ok(d, &with_inputs("align", &["--init", "convex", "--fw-size", "100", "--fw-iters", "20", "--iters", "100", "--batch-size", "50", "--out", "q.map", "--loss-csv", "loss.csv"]));
    let loss = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("iter,loss"));
    assert_eq!(loss.lines().count(), 101);

    ok(d, &with_inputs("eval", &["--map", "q.map", "--lexicon", "truth.txt", "--out", "report.json"]));
    let report = read_json(&d.join("report.json"));
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["n_queries", "oov_skipped", "precision_at"]);
    assert_eq!(report["n_queries"], 300);
    for k in ["1", "5", "10"] {
        let p = report["precision_at"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    ok(d, &with_inputs("translate", &["--map", "q.map", "--top-k", "2", "--out", "tr.tsv"]));
    let tsv = std::fs::read_to_string(d.join("tr.tsv")).unwrap();
    assert_eq!(tsv.lines().next(), Some("query\trank\ttarget\tscore"));
    assert_eq!(tsv.lines().count(), 1 + 2 * 300);
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 4));

    ok(d, &with_inputs("plot", &["--map", "q.map", "--out", "plot.csv"]));
    let plot = std::fs::read_to_string(d.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().next(), Some("label,set,pc1,pc2"));
    assert_eq!(plot.lines().count(), 1 + 600);

    for out in ["q.map", "report.json", "tr.tsv", "plot.csv"] {
        let manifest = read_json(&d.join(format!("{out}.manifest.json")));
        assert_eq!(manifest["threads"], 1);
        assert!(manifest["argv"].as_array().unwrap().len() > 2);
        assert!(manifest["outputs"].as_array().unwrap().iter().any(|p| p.as_str().unwrap().ends_with(out)));
    }
}

#[test]
fn refinement_from_the_true_map_keeps_full_precision() {
    let dir = synthetic();
    let d = dir.path();
    ok(d, &with_inputs("refine", &["--map", "truth.map", "--epochs", "2", "--out", "qr.map", "--log", "refine.csv"]));
    let log = std::fs::read_to_string(d.join("refine.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,dictionary_size"));
    assert_eq!(log.lines().count(), 3);
    ok(d, &with_inputs("eval", &["--map", "qr.map", "--lexicon", "truth.txt", "--ks", "1", "--out", "r.json"]));
    assert_eq!(read_json(&d.join("r.json"))["precision_at"]["1"], 1.0);
}

#[test]
fn supervised_alignment_fits_the_lexicon() {
    let dir = synthetic();
    let d = dir.path();
    ok(d, &with_inputs("align", &["--supervised", "truth.txt", "--preprocess", "none", "--out", "q.map"]));
    ok(d, &with_inputs("eval", &["--map", "q.map", "--lexicon", "truth.txt", "--retrieval", "nn", "--preprocess", "none", "--out", "r.json"]));
    assert_eq!(read_json(&d.join("r.json"))["precision_at"]["1"], 1.0);
    assert_eq!(read_json(&d.join("q.map.manifest.json"))["summary"]["mode"], "supervised");
}

#[test]
fn threads_fall_back_to_the_environment() {
    let dir = synthetic();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_wproc"))
        .current_dir(d)
        .args(["plot", "--src", "src.vec", "--tgt", "tgt.vec", "--out", "p.csv"])
        .env("WPROC_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read_json(&d.join("p.csv.manifest.json"))["threads"], 3);
}

#[test]
fn replay_reproduces_a_run() {
    let dir = synthetic();
    let d = dir.path();
    ok(d, &with_inputs("translate", &["--map", "truth.map", "--top-k", "1", "--out", "tr.tsv"]));
    let first = std::fs::read(d.join("tr.tsv")).unwrap();
    std::fs::remove_file(d.join("tr.tsv")).unwrap();
    ok(d, &["replay", "tr.tsv.manifest.json"]);
    assert_eq!(std::fs::read(d.join("tr.tsv")).unwrap(), first);
}

#[test]
fn each_failure_class_has_its_own_exit_code() {
    let dir = synthetic();
    let d = dir.path();
    std::fs::write(d.join("bad.vec"), "2 3\na 1 2\n").unwrap();
    std::fs::write(d.join("tiny.txt"), "s0 t0\ns1 t1\n").unwrap();
    std::fs::write(d.join("foreign.txt"), "nope nada\n").unwrap();

    let missing = wproc(d, &["plot", "--src", "absent.vec", "--tgt", "tgt.vec", "--out", "p.csv"]);
    assert_eq!(code(&missing), 2, "{}", String::from_utf8_lossy(&missing.stderr));

    let malformed = wproc(d, &["plot", "--src", "bad.vec", "--tgt", "tgt.vec", "--out", "p.csv"]);
    assert_eq!(code(&malformed), 3, "{}", String::from_utf8_lossy(&malformed.stderr));

    assert_eq!(code(&wproc(d, &["align", "--no-such-flag"])), 4);
    assert_eq!(code(&wproc(d, &with_inputs("align", &["--matcher", "greedy", "--out", "q.map"]))), 4);
    assert_eq!(code(&wproc(d, &with_inputs("align", &["--init", "random", "--batch-size", "0", "--out", "q.map"]))), 4);

    // Two pairs cannot determine an 8-dimensional rotation.
    let degenerate = wproc(d, &with_inputs("align", &["--supervised", "tiny.txt", "--out", "q.map"]));
    assert_eq!(code(&degenerate), 5, "{}", String::from_utf8_lossy(&degenerate.stderr));

    let empty = wproc(d, &with_inputs("eval", &["--map", "truth.map", "--lexicon", "foreign.txt", "--out", "r.json"]));
    assert_eq!(code(&empty), 6, "{}", String::from_utf8_lossy(&empty.stderr));

    assert_eq!(code(&wproc(d, &["--help"])), 0);
}
