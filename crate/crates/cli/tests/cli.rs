use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_commexp"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn commexp")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn last_json(bytes: &[u8]) -> Value {
    let text = String::from_utf8_lossy(bytes);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("a JSON line");
    serde_json::from_str(line).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

// One corpus and one trained classifier shared by every test.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&[
            "generate-synthetic",
            "--out-dir",
            s(&f.path("data")),
            "--n-train",
            "600",
            "--n-dev",
            "150",
            "--n-test",
            "200",
            "--vocab-size",
            "300",
            "--noise-len",
            "20",
            "--seed",
            "3",
        ]);
        ok(&[
            "train-classifier",
            "--corpus",
            s(&f.path("data/corpus.json")),
            "--embed-dim",
            "16",
            "--hidden",
            "16",
            "--attn-dim",
            "16",
            "--epochs",
            "4",
            "--lr",
            "5e-3",
            "--seed",
            "5",
            "--out-dir",
            s(&f.path("model")),
        ]);
        f
    })
}

fn explain(kind: &str, k: &str, out: &str) -> PathBuf {
    let f = fixture();
    let dir = f.path(out);
    ok(&[
        "explain",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--kind",
        kind,
        "--k",
        k,
        "--out-dir",
        s(&dir),
    ]);
    dir
}

fn read_lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn test_csr(kind: &str) -> f64 {
    let f = fixture();
    let exp = explain(kind, "3", &format!("exp_{kind}"));
    let lay = f.path(&format!("lay_{kind}"));
    ok(&[
        "train-layperson",
        "--explanations",
        s(&exp),
        "--seed",
        "3",
        "--out-dir",
        s(&lay),
    ]);
    let out = ok(&[
        "evaluate",
        "--dump",
        s(&exp.join("test.jsonl")),
        "--layperson",
        s(&lay),
        "--json",
        "--out-dir",
        s(&f.path(&format!("eval_{kind}"))),
    ]);
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["n"], 200);
    report["csr"].as_f64().unwrap()
}

#[test]
fn keyword_explainers_communicate_better_than_random() {
    let random = test_csr("random");
    let attention = test_csr("topk_attention");
    let gradient = test_csr("topk_gradient");
    assert!(
        attention > random,
        "top-k attention {attention} vs random {random}"
    );
    assert!(
        gradient > random + 0.15,
        "top-k gradient {gradient} vs random {random}"
    );
}

#[test]
fn every_command_records_its_configuration() {
    let f = fixture();
    let exp = explain("random", "2", "exp_config");
    for (dir, cmd) in [
        (f.path("data"), "generate-synthetic"),
        (f.path("model"), "train-classifier"),
        (exp.clone(), "explain"),
    ] {
        let doc: Value = serde_json::from_str(
            &std::fs::read_to_string(dir.join(format!("{cmd}.config.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(doc["command"], cmd);
        assert!(doc["args"].is_object());
    }
    let doc: Value = serde_json::from_str(
        &std::fs::read_to_string(f.path("model/train-classifier.config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(doc["resolved"]["train"]["epochs"], 4);
    assert_eq!(doc["resolved"]["model"]["hidden"], 16);
    assert_eq!(doc["resolved"]["model"]["transform"], "softmax");
}

#[test]
fn random_with_zero_budget_sends_empty_messages() {
    let exp = explain("random", "0", "exp_k0");
    let recs = read_lines(&exp.join("test.jsonl"));
    assert_eq!(recs.len(), 200);
    assert!(recs
        .iter()
        .all(|r| r["message_ids"].as_array().unwrap().is_empty()));
    let f = fixture();
    let lay = f.path("lay_k0");
    ok(&[
        "train-layperson",
        "--explanations",
        s(&exp),
        "--epochs",
        "2",
        "--patience",
        "1",
        "--out-dir",
        s(&lay),
    ]);
    let out = ok(&[
        "evaluate",
        "--dump",
        s(&exp.join("test.jsonl")),
        "--layperson",
        s(&lay),
        "--json",
        "--out-dir",
        s(&f.path("eval_k0")),
    ]);
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert!(report["entropy"].is_null());
    assert_eq!(report["mean_k"], 0.0);
}

#[test]
fn decisions_copied_into_the_dump_score_full_csr() {
    let f = fixture();
    let exp = explain("topk_attention", "2", "exp_copy");
    let copied = f.path("copied");
    std::fs::create_dir_all(&copied).unwrap();
    let mut w = std::fs::File::create(copied.join("dump.jsonl")).unwrap();
    for mut r in read_lines(&exp.join("test.jsonl")) {
        r["y_tilde"] = r["y_hat"].clone();
        writeln!(w, "{r}").unwrap();
    }
    drop(w);
    let out = ok(&[
        "evaluate",
        "--dump",
        s(&copied.join("dump.jsonl")),
        "--json",
        "--out-dir",
        s(&f.path("eval_copy")),
    ]);
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["csr"], 1.0);
    assert!(f.path("eval_copy/report.json").exists());
    assert!(f.path("eval_copy/records.jsonl").exists());
}

#[test]
fn missing_layperson_decisions_is_a_data_error() {
    let f = fixture();
    let exp = explain("random", "2", "exp_noy");
    let out = run(&[
        "evaluate",
        "--dump",
        s(&exp.join("test.jsonl")),
        "--out-dir",
        s(&f.path("eval_noy")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = last_json(&out.stderr);
    assert_eq!(err["error"], "data");
    assert_eq!(err["exit_code"], 4);
    assert!(err["message"].as_str().unwrap().contains("y_tilde"));
}

#[test]
fn foreign_vocabulary_is_a_fingerprint_mismatch() {
    let f = fixture();
    let other = f.path("other");
    ok(&[
        "generate-synthetic",
        "--out-dir",
        s(&other),
        "--n-train",
        "50",
        "--n-dev",
        "10",
        "--n-test",
        "10",
        "--vocab-size",
        "80",
        "--seed",
        "9",
    ]);
    let out = run(&[
        "explain",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&other.join("corpus.json")),
        "--kind",
        "random",
        "--k",
        "2",
        "--out-dir",
        s(&f.path("exp_foreign")),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(last_json(&out.stderr)["error"], "fingerprint_mismatch");

    // A layperson trained on one vocabulary cannot score dumps from another.
    let exp = explain("random", "2", "exp_fp");
    let lay = f.path("lay_fp");
    ok(&[
        "train-layperson",
        "--explanations",
        s(&exp),
        "--epochs",
        "1",
        "--patience",
        "1",
        "--out-dir",
        s(&lay),
    ]);
    let foreign_vocab = commexp::text::generate_synthetic(&commexp::text::SyntheticConfig {
        vocab_size: 80,
        n_train: 10,
        n_dev: 2,
        n_test: 2,
        ..Default::default()
    })
    .unwrap()
    .vocab;
    foreign_vocab.save(&exp.join("vocab.json")).unwrap();
    let out = run(&[
        "evaluate",
        "--dump",
        s(&exp.join("test.jsonl")),
        "--layperson",
        s(&lay),
        "--out-dir",
        s(&f.path("eval_fp")),
    ]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn bad_configuration_exits_with_the_config_code() {
    let f = fixture();
    let out = run(&[
        "explain",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--kind",
        "telepathy",
        "--out-dir",
        s(&f.path("exp_bad")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = run(&[
        "explain",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--kind",
        "selective_attention",
        "--out-dir",
        s(&f.path("exp_sel")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "softmax heads have no sparse support"
    );
    let out = run(&[
        "train-classifier",
        "--format",
        "tsv",
        "--train",
        "/nonexistent/train.tsv",
        "--out-dir",
        s(&f.path("nope")),
    ]);
    assert_eq!(out.status.code(), Some(7));
    assert_eq!(last_json(&out.stderr)["error"], "io");
}

#[test]
fn sweep_writes_one_curve_row_per_point() {
    let f = fixture();
    let out = f.path("sweep");
    let table = ok(&[
        "sweep",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--ks",
        "1,full",
        "--epochs",
        "3",
        "--out-dir",
        s(&out),
    ]);
    assert!(table.contains("topk_attention@1") && table.contains("topk_attention@full"));
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "k,csr,acc_l");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,") && rows[2].starts_with("full,"));
    let out = run(&[
        "sweep",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--ks",
        "4,2",
        "--out-dir",
        s(&f.path("sweep_bad")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn joint_training_produces_a_usable_explainer() {
    let f = fixture();
    let jdir = f.path("joint");
    let out = ok(&[
        "joint",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--embed-dim",
        "8",
        "--hidden",
        "8",
        "--attn-dim",
        "8",
        "--ffn-hidden",
        "8",
        "--k",
        "3",
        "--epochs",
        "2",
        "--patience",
        "1",
        "--out-dir",
        s(&jdir),
    ]);
    let report = last_json(out.as_bytes());
    let csr = report["dev_csr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&csr));
    assert!(jdir.join("joint.json").exists() && jdir.join("train_log.jsonl").exists());

    let exp = f.path("exp_joint");
    ok(&[
        "explain",
        "--model-dir",
        s(&f.path("model")),
        "--corpus",
        s(&f.path("data/corpus.json")),
        "--kind",
        "joint",
        "--joint-dir",
        s(&jdir),
        "--splits",
        "test",
        "--out-dir",
        s(&exp),
    ]);
    let recs = read_lines(&exp.join("test.jsonl"));
    assert_eq!(recs.len(), 200);
    let stop = commexp::text::stopwords::is_stopword;
    for r in &recs {
        let toks = r["message_tokens"].as_array().unwrap();
        assert!(!toks.is_empty() && toks.len() <= 3);
        assert!(toks.iter().all(|t| !stop(t.as_str().unwrap())));
    }
}

#[test]
fn served_sessions_are_reachable_over_tcp() {
    let f = fixture();
    let exp = explain("topk_attention", "3", "exp_serve");
    let sessions = f.path("sessions");
    let created = ok(&[
        "create-session",
        "--explanations",
        s(&exp),
        "--id",
        "pilot",
        "--items",
        "5",
        "--sessions-dir",
        s(&sessions),
    ]);
    assert_eq!(last_json(created.as_bytes())["items"], 5);
    let dup = run(&[
        "create-session",
        "--explanations",
        s(&exp),
        "--id",
        "pilot",
        "--sessions-dir",
        s(&sessions),
    ]);
    assert_eq!(dup.status.code(), Some(9));

    let mut child = bin()
        .args([
            "serve",
            "--sessions-dir",
            s(&sessions),
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = serde_json::from_str::<Value>(&line).unwrap()["listening"]
        .as_str()
        .unwrap()
        .to_string();
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /session/pilot HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"id\":\"pilot\""));
    assert!(!resp.contains("y_hat") && !resp.contains("topk_attention"));
}
