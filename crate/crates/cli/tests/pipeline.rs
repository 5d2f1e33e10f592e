//! End-to-end checks of the command-line surface: the full pipeline on a
//! small fixture, byte-level reproducibility, log alignment, and the exit
//! code taxonomy (0 ok, 1 usage, 2 data).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_prosper")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn prosper")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

const PAIRS: &str = "q1\tred running shoe\ti1\tred shoe sport\n\
q2\tblue cotton sock\ti2\tblue sock cotton soft\n\
q3\tgreen hat\ti3\tgreen hat wool\n\
q4\tred sock\ti4\tred sock pair\n";

const ITEMS: &str = r#"{"id": "i1", "text": "red shoe sport"}
{"id": "i2", "text": "blue sock cotton soft"}
{"id": "i3", "text": "green hat wool"}
{"id": "i4", "text": "red sock pair"}
"#;

const QUERIES: &str = r#"{"id": "q1", "text": "red running shoe"}
{"id": "q3", "text": "green hat"}
"#;

const QRELS: &str = "q1\ti1\nq3\ti3\n";

const CONFIG: &str = "k_q=8\nk_d=16\nlr=0.01\nbatch_size=2\nepochs=20\nseed=7\nwarmup_steps_lr=5\nwarmup_steps_flops=20\n";

fn setup_fixture(dir: &Path) {
    write(dir, "pairs.tsv", PAIRS);
    write(dir, "items.jsonl", ITEMS);
    write(dir, "queries.jsonl", QUERIES);
    write(dir, "qrels.tsv", QRELS);
    write(dir, "cfg.txt", CONFIG);
}

#[test]
fn full_pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_fixture(dir);

    assert_ok(
        &run_in(dir, &["train", "--pairs", "pairs.tsv", "--config", "cfg.txt", "--model-out", "model.bin", "--vocab-out", "vocab.txt", "--log-out", "log.jsonl"]),
        "train",
    );
    assert_ok(
        &run_in(dir, &["encode", "--model", "model.bin", "--vocab", "vocab.txt", "--input", "items.jsonl", "--output", "items.vec"]),
        "encode items",
    );
    assert_ok(
        &run_in(dir, &["encode", "--model", "model.bin", "--vocab", "vocab.txt", "--input", "queries.jsonl", "--output", "queries.vec"]),
        "encode queries",
    );
    assert_ok(
        &run_in(dir, &["index", "--vectors", "items.vec", "--output", "idx.prix"]),
        "index",
    );
    assert_ok(
        &run_in(dir, &["search", "--index", "idx.prix", "--queries", "queries.vec", "--output", "run.tsv", "--topk", "4"]),
        "search",
    );
    let eval = run_in(dir, &["eval", "--run", "run.tsv", "--qrels", "qrels.tsv", "--json", "report.json"]);
    assert_ok(&eval, "eval");
    let table = String::from_utf8_lossy(&eval.stdout);
    assert!(table.contains("hit@10"), "table missing metric: {table}");

    // metric subset selection
    let eval = run_in(dir, &["eval", "--run", "run.tsv", "--qrels", "qrels.tsv", "--metrics", "hit@10,mrr@10"]);
    assert_ok(&eval, "eval --metrics");
    let filtered = String::from_utf8_lossy(&eval.stdout);
    assert_eq!(filtered.lines().count(), 2, "expected exactly 2 rows: {filtered}");
    let eval = run_in(dir, &["eval", "--run", "run.tsv", "--qrels", "qrels.tsv", "--metrics", "nope@7"]);
    assert_eq!(eval.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["hit_at_10"].as_f64().unwrap() > 0.9, "trained model should solve the toy fixture: {report}");

    // bmm and exhaustive engines agree on the run file
    assert_ok(
        &run_in(dir, &["search", "--index", "idx.prix", "--queries", "queries.vec", "--output", "run_ex.tsv", "--topk", "4", "--engine", "exhaustive"]),
        "exhaustive search",
    );
    assert_eq!(
        std::fs::read(dir.join("run.tsv")).unwrap(),
        std::fs::read(dir.join("run_ex.tsv")).unwrap(),
        "engines disagree"
    );

    // bm25 route
    assert_ok(
        &run_in(dir, &["bm25-index", "--corpus", "items.jsonl", "--vocab", "vocab.txt", "--output", "bm25.bin"]),
        "bm25-index",
    );
    assert_ok(
        &run_in(dir, &["bm25-search", "--index", "bm25.bin", "--queries", "queries.jsonl", "--vocab", "vocab.txt", "--output", "bm25_run.tsv"]),
        "bm25-search",
    );
    let eval = run_in(dir, &["eval", "--run", "bm25_run.tsv", "--qrels", "qrels.tsv"]);
    assert_ok(&eval, "bm25 eval");

    // the search subcommand exposes bm25 as an engine too
    assert_ok(
        &run_in(dir, &["search", "--engine", "bm25", "--index", "bm25.bin", "--queries", "queries.jsonl", "--vocab", "vocab.txt", "--output", "bm25_run2.tsv"]),
        "search --engine bm25",
    );
    assert_eq!(
        std::fs::read(dir.join("bm25_run.tsv")).unwrap(),
        std::fs::read(dir.join("bm25_run2.tsv")).unwrap()
    );

    // masked encodings partition the unmasked ones
    assert_ok(
        &run_in(dir, &["encode", "--model", "model.bin", "--vocab", "vocab.txt", "--input", "items.jsonl", "--output", "lit.vec", "--mask", "literal_only"]),
        "encode --mask literal_only",
    );
    assert_ok(
        &run_in(dir, &["encode", "--model", "model.bin", "--vocab", "vocab.txt", "--input", "items.jsonl", "--output", "exp.vec", "--mask", "expansion_only"]),
        "encode --mask expansion_only",
    );
    let full = std::fs::metadata(dir.join("items.vec")).unwrap().len();
    let lit = std::fs::metadata(dir.join("lit.vec")).unwrap().len();
    let exp = std::fs::metadata(dir.join("exp.vec")).unwrap().len();
    // record framing repeats ids and counts, so sizes only add up modulo it
    assert!(lit < full && exp < full, "masked files should shrink: {lit}/{exp} vs {full}");
}

#[test]
fn outputs_are_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_fixture(dir);

    for round in ["a", "b"] {
        assert_ok(
            &run_in(dir, &["train", "--pairs", "pairs.tsv", "--config", "cfg.txt", "--model-out", &format!("model_{round}.bin"), "--vocab-out", &format!("vocab_{round}.txt"), "--log-out", &format!("log_{round}.jsonl")]),
            "train",
        );
    }
    for name in ["model", "vocab", "log"] {
        let ext = match name {
            "model" => "bin",
            "vocab" => "txt",
            _ => "jsonl",
        };
        let a = std::fs::read(dir.join(format!("{name}_a.{ext}"))).unwrap();
        let b = std::fs::read(dir.join(format!("{name}_b.{ext}"))).unwrap();
        assert_eq!(a, b, "{name} not reproducible");
    }

    for round in ["a", "b"] {
        assert_ok(
            &run_in(dir, &["encode", "--model", "model_a.bin", "--vocab", "vocab_a.txt", "--input", "items.jsonl", "--output", &format!("items_{round}.vec")]),
            "encode",
        );
    }
    assert_eq!(
        std::fs::read(dir.join("items_a.vec")).unwrap(),
        std::fs::read(dir.join("items_b.vec")).unwrap(),
        "encoded vectors not reproducible"
    );
}

#[test]
fn synthetic_generation_writes_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "fast.txt", "epochs=1\nbatch_size=64\nseed=42\nk_q=8\nk_d=16\n");
    assert_ok(
        &run_in(dir, &["train", "--generate-synthetic", "synth", "--config", "fast.txt", "--model-out", "model.bin", "--vocab-out", "vocab.txt"]),
        "train --generate-synthetic",
    );
    for f in ["items.jsonl", "train_pairs.tsv", "test_queries.jsonl", "qrels.tsv"] {
        assert!(dir.join("synth").join(f).exists(), "missing generated file {f}");
    }
    assert!(dir.join("model.bin").exists());
}

#[test]
fn bench_sparsity_aligns_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let log = "{\"step\":0,\"loss\":1.0,\"rank_loss\":1.0,\"flops_q\":0.0,\"flops_d\":0.0,\"nnz_q_mean\":40.0,\"nnz_d_mean\":60.0,\"k_q\":8,\"k_d\":16}\n\
{\"step\":10,\"loss\":0.5,\"rank_loss\":0.5,\"flops_q\":0.0,\"flops_d\":0.0,\"nnz_q_mean\":20.0,\"nnz_d_mean\":30.0,\"k_q\":8,\"k_d\":16}\n";
    write(dir, "on.jsonl", log);
    write(dir, "off.jsonl", log);
    assert_ok(
        &run_in(dir, &["bench-sparsity", "--log-on", "on.jsonl", "--log-off", "off.jsonl", "--output", "sparsity.csv"]),
        "bench-sparsity",
    );
    let csv = std::fs::read_to_string(dir.join("sparsity.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,nnz_q_on,nnz_d_on,nnz_q_off,nnz_d_off");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], cols[3], "identical logs must give equal q columns");
        assert_eq!(cols[2], cols[4], "identical logs must give equal d columns");
    }

    // mismatched grids resample to the union with nearest-step values
    let off = "{\"step\":5,\"loss\":0.7,\"rank_loss\":0.7,\"flops_q\":0.0,\"flops_d\":0.0,\"nnz_q_mean\":35.0,\"nnz_d_mean\":55.0,\"k_q\":8,\"k_d\":16}\n";
    write(dir, "off2.jsonl", off);
    assert_ok(
        &run_in(dir, &["bench-sparsity", "--log-on", "on.jsonl", "--log-off", "off2.jsonl", "--output", "s2.csv"]),
        "bench-sparsity resample",
    );
    let csv = std::fs::read_to_string(dir.join("s2.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "union grid of steps 0,5,10: {csv}");

    // empty log is a data error
    write(dir, "empty.jsonl", "");
    let out = run_in(dir, &["bench-sparsity", "--log-on", "empty.jsonl", "--log-off", "off.jsonl", "--output", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_code_taxonomy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup_fixture(dir);

    // usage errors: missing required flag, unknown subcommand, bad flag
    let out = run_in(dir, &["encode", "--vocab", "vocab.txt", "--input", "items.jsonl", "--output", "x.vec"]);
    assert_eq!(out.status.code(), Some(1), "missing --model should be usage error");
    let out = run_in(dir, &["totally-bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_in(dir, &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    // data errors: missing file, malformed row
    let out = run_in(dir, &["eval", "--run", "missing.tsv", "--qrels", "qrels.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    write(dir, "bad_pairs.tsv", "q1\tred shoe\ti1\n");
    let out = run_in(dir, &["train", "--pairs", "bad_pairs.tsv", "--config", "cfg.txt", "--model-out", "m.bin", "--vocab-out", "v.txt"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "error should name the line: {stderr}");

    // unknown config key
    write(dir, "bad_cfg.txt", "bogus_key=1\n");
    let out = run_in(dir, &["train", "--pairs", "pairs.tsv", "--config", "bad_cfg.txt", "--model-out", "m.bin", "--vocab-out", "v.txt"]);
    assert_eq!(out.status.code(), Some(2));

    // help is a success
    let out = run_in(dir, &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}
