use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "d_model = 16
n_heads = 2
d_ff = 32
n_layers_enc = 1
n_layers_dec = 1
steps_pretrain = 10
steps_finetune = 10
eval_every = 5
min_freq = 1
augment_factor = 2
max_out_len = 24
";

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/raw_corpus.jsonl")
}

fn revgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revgen"))
        .current_dir(dir)
        .env_remove("GITHUB_TOKEN")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = revgen(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn version_prints_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--version"]);
    assert!(out.contains("schema 1"), "{out}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["bogus"],
        vec![],
        vec!["--set", "nope=1", "tag", "--input", "a", "--out", "b"],
        vec!["--set", "n_heads=3", "tag", "--input", "a", "--out", "b"],
        vec!["finetune", "--train", "t", "--vocab", "v", "--out", "o", "--curve", "c"],
        vec!["fetch", "--repo", "a/b", "--out", "x.jsonl"],
    ] {
        let out = revgen(dir.path(), &args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = revgen(dir.path(), &["tag", "--input", "missing.jsonl", "--out", "pairs.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.matches("No such file").count(), 1, "{err}");

    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    let out = revgen(dir.path(), &["prepare", "--input", "bad.jsonl", "--out", "p.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_with_ablation_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.conf"), TINY).unwrap();
    let raw = fixture();
    let c = ["--config", "tiny.conf"];
    let run = |rest: &[&str]| ok(d, &[&c[..], rest].concat());

    let prep = run(&["prepare", "--input", raw.to_str().unwrap(), "--out", "prepared.jsonl", "--rejected", "rejected.jsonl"]);
    let prep: serde_json::Value = serde_json::from_str(&prep).unwrap();
    assert_eq!(prep["duplicates"], 1);
    assert_eq!(prep["rejected"]["TOO_SHORT"], 1);
    assert_eq!(prep["rejected"]["BEYOND_FUNCTION"], 1);

    run(&["tag", "--input", "prepared.jsonl", "--out", "pairs.jsonl"]);
    run(&["split", "--input", "pairs.jsonl", "--out-dir", "split"]);
    run(&["augment", "--input", "split/train.jsonl", "--out", "train_aug.jsonl"]);
    run(&["vocab", "--input", "train_aug.jsonl", "--out", "vocab.txt"]);
    run(&["pretrain", "--train", "train_aug.jsonl", "--vocab", "vocab.txt", "--out", "pre.ckpt", "--curve", "pre.csv"]);
    let tune = |extra: &[&str], out: &str| {
        let mut args = vec!["finetune", "--train", "train_aug.jsonl", "--valid", "split/valid.jsonl", "--vocab", "vocab.txt"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out, "--curve", "curve.csv"]);
        let s: serde_json::Value = serde_json::from_str(&run(&args)).unwrap();
        s["step"].as_u64().unwrap()
    };
    assert_eq!(tune(&["--pretrained", "pre.ckpt", "--best", "best.ckpt"], "ft.ckpt"), 10);
    assert_eq!(tune(&["--no-pretrain"], "scratch.ckpt"), 10);
    assert_eq!(tune(&["--no-pretrain", "--no-review-tag"], "untagged.ckpt"), 10);
    assert_eq!(tune(&["--resume", "ft.ckpt"], "boosted.ckpt"), 20);
    assert!(d.join("best.ckpt").exists());

    run(&["generate", "--input", "split/test.jsonl", "--model", "ft.ckpt", "--vocab", "vocab.txt", "--out", "gen.jsonl", "--top-k", "3"]);
    let gens = std::fs::read_to_string(d.join("gen.jsonl")).unwrap();
    for line in gens.lines() {
        let g: serde_json::Value = serde_json::from_str(line).unwrap();
        let cands = g["candidates"].as_array().unwrap();
        assert!(!cands.is_empty() && cands.len() <= 3);
    }
    let table = run(&["evaluate", "--generations", "gen.jsonl", "--refs", "split/test.jsonl", "--out", "eval.csv"]);
    assert!(table.contains("ROUGE-L"), "{table}");
    let csv = std::fs::read_to_string(d.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    std::fs::write(d.join("A.java"), "class A {\n    int f(String s) {\n        return s.length();\n    }\n}\n").unwrap();
    let applied = run(&["apply", "--file", "A.java", "--lines", "3:3", "--model", "ft.ckpt", "--vocab", "vocab.txt", "--top-k", "2"]);
    let a: serde_json::Value = serde_json::from_str(applied.lines().next().unwrap()).unwrap();
    assert_eq!(a["tag_lines"], serde_json::json!([3]));
    assert_eq!(a["candidates"].as_array().unwrap().len(), 2);

    let out = revgen(d, &[&c[..], &["apply", "--file", "A.java", "--lines", "3-4", "--model", "ft.ckpt", "--vocab", "vocab.txt"]].concat());
    assert_eq!(out.status.code(), Some(1));
}
