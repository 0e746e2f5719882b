use std::path::Path;
use std::process::{Command, Output};

use sac_cli::formats::{read_checkpoint, read_edges, write_edges, write_graph};
use sac_cli::metrics::{read_summary, validate_stream};
use sac_core::tasks::two_cliques;

const TINY: &str = r#"
[task]
name = "pointer"
n = 8
vocab = 4
train_examples = 64
valid_examples = 16
test_examples = 16

[model]
layers = 1
heads = 2
d = 8
d_ff = 16
d_lstm = 4

[edges]
alpha = 1

[train]
batch_size = 8
beam = 2
eval_every = 4
"#;

fn sac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sac")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn summary_value(dir: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    read_summary(&text).into_iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no {key}")).1
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_then_eval_reproduces_the_test_metric() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let run = tmp.path().join("run");
    let o = sac(&["train", "--config", &cfg, "--seed", "3", "--out", run.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let recs = validate_stream(&metrics).unwrap();
    assert!(recs.len() >= 3);
    let ckpt = run.join("checkpoint.bin");
    let eval_dir = tmp.path().join("eval");
    let o = sac(&[
        "eval", "--config", &cfg, "--seed", "3", "--checkpoint", ckpt.to_str().unwrap(), "--out", eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_value(&run, "test_metric"), summary_value(&eval_dir, "test_metric"));
    validate_stream(&std::fs::read_to_string(eval_dir.join("metrics.jsonl")).unwrap()).unwrap();
    read_checkpoint::<f64>(&std::fs::read(&ckpt).unwrap()).unwrap();
}

#[test]
fn reruns_are_byte_identical_apart_from_wall_time() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let mut streams = Vec::new();
    let mut ckpts = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("r{k}"));
        let o = sac(&["train", "--config", &cfg, "--override", "edges.shared_structure=true", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let text = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
        let lines: Vec<String> = validate_stream(&text).unwrap().iter().map(|r| r.without_time().to_line()).collect();
        streams.push(lines);
        ckpts.push(std::fs::read(out.join("checkpoint.bin")).unwrap());
    }
    assert_eq!(streams[0], streams[1]);
    assert_eq!(ckpts[0], ckpts[1]);
}

#[test]
fn edges_dump_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    for source in ["sac", "random", "segment", "bpt", "dense"] {
        let out = tmp.path().join(source);
        let o = sac(&["edges", "--config", &cfg, "--override", &format!("edges.source=\"{source}\""), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{source}: {}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(out.join("edges.tsv")).unwrap();
        let es = read_edges(&text).unwrap();
        assert_eq!(write_edges(&es), text, "{source}");
    }
}

#[test]
fn graph_file_task_trains() {
    let tmp = tempfile::tempdir().unwrap();
    let g = two_cliques(6, 4, 1).unwrap();
    let gp = tmp.path().join("g.txt");
    std::fs::write(&gp, write_graph(&g)).unwrap();
    let out = tmp.path().join("out");
    let o = sac(&[
        "train",
        "--override", "task.name=\"graph\"",
        "--override", &format!("task.graph=\"{}\"", gp.display()),
        "--override", "model.d=8",
        "--override", "model.heads=2",
        "--override", "model.d_ff=8",
        "--override", "model.d_lstm=4",
        "--override", "train.epochs=10",
        "--override", "train.max_steps=5",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_value(&out, "steps"), "5");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(code(&sac(&["train", "--config", &cfg, "--override", "model.d=7", "--out", out])), 1);
    assert_eq!(code(&sac(&["train", "--config", &cfg, "--override", "edges.nonsense=1", "--out", out])), 1);
    assert_eq!(code(&sac(&["train", "--config", "/nonexistent/cfg.toml", "--out", out])), 1);
    assert_eq!(code(&sac(&["frobnicate"])), 1);
    let missing_graph = sac(&["train", "--override", "task.name=\"graph\"", "--override", "task.graph=\"/nonexistent/g.txt\"", "--out", out]);
    assert_eq!(code(&missing_graph), 2);
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "2 1 2\n0.5\n0.5\n0\n1\n0 1\n").unwrap();
    let asymmetric = sac(&["train", "--override", "task.name=\"graph\"", "--override", &format!("task.graph=\"{}\"", bad.display()), "--out", out]);
    assert_eq!(code(&asymmetric), 2);
    let blowup = sac(&["train", "--config", &cfg, "--override", "optim.lr_phi=1e200", "--override", "edges.source=\"dense\"", "--out", out]);
    assert_eq!(code(&blowup), 3, "{}", String::from_utf8_lossy(&blowup.stderr));
    assert_eq!(code(&sac(&["--help"])), 0);
}

#[test]
fn selftest_passes() {
    let o = sac(&["selftest"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn bench_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = sac(&["bench", "--override", "model.d=8", "--override", "model.d_ff=8", "--ns", "8,16", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("bench.tsv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}
