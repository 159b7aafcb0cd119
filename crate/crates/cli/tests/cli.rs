use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cgsum::checkpoint::Checkpoint;
use cgsum::data::write_corpus;
use cgsum::model::Model;
use cgsum::synthetic::CopyTagTask;
use tempfile::TempDir;

fn cgsum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgsum"))
        .args(args)
        .env("CGU_NUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    corpus: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let task = CopyTagTask { pairs: 10, max_len: 6, ..CopyTagTask::default() };
    write_corpus(&corpus, &task.generate(5)).unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{"model": {"emb_dim": 6, "hidden": 6}, "train": {"epochs": 2, "batch_size": 4}, "generate": {"beam": 3, "max_len": 8}}"#,
    )
    .unwrap();
    Fixture { dir, corpus, config }
}

fn train(f: &Fixture, name: &str, extra: &[&str]) -> (PathBuf, Output) {
    let out = f.dir.path().join(name);
    let mut args = vec!["train", "--config", s(&f.config), "--corpus", s(&f.corpus), "--out", s(&out)];
    args.extend_from_slice(extra);
    let res = cgsum(&args);
    (out, res)
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let f = fixture();
    let (a, ra) = train(&f, "a", &["--seed", "3"]);
    assert_eq!(code(&ra), 0, "{}", String::from_utf8_lossy(&ra.stderr));
    for file in ["src.vocab", "tgt.vocab", "epoch-001.ckpt", "epoch-002.ckpt", "final.ckpt", "train_log.jsonl"] {
        assert!(a.join(file).exists(), "{file}");
    }
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[1]["epoch"], 2);
    assert_eq!(entries[1]["lr"].as_f64().unwrap(), 0.0005);

    let (b, rb) = train(&f, "b", &["--seed", "3"]);
    assert_eq!(code(&rb), 0);
    let strip = |dir: &Path| -> Vec<(i64, f64)> {
        fs::read_to_string(dir.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                (v["epoch"].as_i64().unwrap(), v["train_loss"].as_f64().unwrap())
            })
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(b.join("final.ckpt")).unwrap());
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let f = fixture();
    let (out, res) = train(&f, "z", &["--lr", "0", "--epochs", "1"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let ck = Checkpoint::<f32>::load(&out.join("epoch-001.ckpt")).unwrap();
    let fresh = Model::<f32>::new(ck.config.clone()).unwrap();
    for (name, t) in &ck.tensors {
        assert!(fresh.store.by_name(name).unwrap().bit_eq(t), "{name}");
    }
}

#[test]
fn generate_beam_one_equals_greedy_and_keeps_empty_lines() {
    let f = fixture();
    let (out, res) = train(&f, "g", &[]);
    assert_eq!(code(&res), 0);
    let input = f.dir.path().join("in.txt");
    fs::write(&input, "t1 w3 w4 w5\n\n  \nt2 w1 w9\n").unwrap();
    let ckpt = out.join("final.ckpt");
    let run = |name: &str, extra: &[&str]| -> String {
        let o = f.dir.path().join(name);
        let mut args = vec!["generate", "--checkpoint", s(&ckpt), "--input", s(&input), "--output", s(&o)];
        args.extend_from_slice(extra);
        let r = cgsum(&args);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        fs::read_to_string(o).unwrap()
    };
    let greedy = run("greedy.txt", &["--greedy"]);
    let beam1 = run("beam1.txt", &["--beam", "1"]);
    let beam3 = run("beam3.txt", &["--config", s(&f.config)]);
    assert_eq!(greedy, beam1);
    for text in [&greedy, &beam3] {
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines.len(), 5, "{text:?}");
        assert_eq!((lines[1], lines[2], lines[4]), ("", "", ""));
        assert!(lines.iter().all(|l| l.split_whitespace().count() <= 8));
    }
}

#[test]
fn score_reports_identity_and_dup_table() {
    let f = fixture();
    let refs = f.dir.path().join("refs.txt");
    fs::write(&refs, "a b c d\nthe cat the cat\n").unwrap();
    let table = f.dir.path().join("dup.csv");
    let r = cgsum(&["score", "--candidates", s(&refs), "--references", s(&refs), "--dup-table", s(&table)]);
    assert_eq!(code(&r), 0);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    for key in ["rouge1_f", "rouge2_f", "rougeL_f"] {
        assert_eq!(v[key].as_f64().unwrap(), 1.0, "{key}");
    }
    assert_eq!(v["pairs"], 2);
    let csv = fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "n,candidate_pct,reference_pct");
    assert_eq!(rows.len(), 5);
    // "the cat the cat": unigrams 2 of 4 repeat, bigrams 1 of 3
    assert_eq!(rows[1], "1,25,25");
    let bigram: Vec<f64> = rows[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((bigram[1] - 100.0 / 6.0).abs() < 1e-12);
}

#[test]
fn exit_codes_follow_error_kinds() {
    let f = fixture();
    // unknown config key: configuration error
    let bad_cfg = f.dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"train": {"epochs": 1, "learning_rate": 0.1}}"#).unwrap();
    let r = cgsum(&["train", "--config", s(&bad_cfg), "--corpus", s(&f.corpus), "--out", s(&f.dir.path().join("x"))]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("learning_rate"));

    assert_eq!(code(&cgsum(&["train", "--corpus"])), 1);
    assert_eq!(code(&cgsum(&["gradcheck", "--dims", "65"])), 1);
    assert_eq!(code(&cgsum(&["--help"])), 0);

    // malformed corpus line: data error
    let corpus = f.dir.path().join("broken.jsonl");
    fs::write(&corpus, "{\"source\": \"a b\", \"summary\": \"a\"}\n{\"source\": \"c\"}\n").unwrap();
    let r = cgsum(&["train", "--corpus", s(&corpus), "--out", s(&f.dir.path().join("y"))]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains(":2:"));

    let one = f.dir.path().join("one.txt");
    let two = f.dir.path().join("two.txt");
    fs::write(&one, "a\n").unwrap();
    fs::write(&two, "a\nb\n").unwrap();
    assert_eq!(code(&cgsum(&["score", "--candidates", s(&one), "--references", s(&two)])), 2);

    // corrupted gradient: numeric error naming the parameter
    let r = cgsum(&["gradcheck", "--corrupt", "attn.w_a"]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("attn.w_a"));

    let r = Command::new(env!("CARGO_BIN_EXE_cgsum"))
        .args(["gradcheck", "--dims", "2"])
        .env("CGU_NUM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&r), 1);
}

#[test]
fn gradcheck_lists_every_parameter_once() {
    let r = cgsum(&["gradcheck", "--dims", "3", "--seed", "2"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    let names: Vec<&str> = text
        .lines()
        .filter(|l| l.ends_with("PASS") || l.ends_with("FAIL"))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    let mut uniq = names.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), names.len());
    for expected in ["src_embed", "cgu.w_att", "attn.w_a", "out.w", "bridge_h.w"] {
        assert!(names.contains(&expected), "{expected}");
    }
    assert!(text.contains(&format!("all {} parameters", names.len())));
}

#[test]
fn generate_rejects_mismatched_vocabulary() {
    let f = fixture();
    let (out, res) = train(&f, "v", &[]);
    assert_eq!(code(&res), 0);
    let other = f.dir.path().join("other");
    fs::create_dir(&other).unwrap();
    fs::write(other.join("src.vocab"), "only\n").unwrap();
    fs::write(other.join("tgt.vocab"), "few\n").unwrap();
    let input = f.dir.path().join("in.txt");
    fs::write(&input, "t1 w2\n").unwrap();
    let r = cgsum(&[
        "generate",
        "--checkpoint",
        s(&out.join("final.ckpt")),
        "--vocab-dir",
        s(&other),
        "--input",
        s(&input),
        "--output",
        s(&f.dir.path().join("o.txt")),
    ]);
    assert_eq!(code(&r), 1);
}
