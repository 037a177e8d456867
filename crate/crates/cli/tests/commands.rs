use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5
[paths]
work_dir = "work"
[data]
size = 1000
min_freq = 3
test_size = 100
[model]
hidden = 10
[pretrain]
epochs = 1
[train]
batch_size = 64
max_epochs = 2
[sampler]
schemes = [{ scheme = "greedy" }, { scheme = "beam", k = 2 }, { scheme = "probabilistic", t = 0.5 }]
[embeddings.skipgram]
dim = 8
epochs = 1
"#;

fn ccgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccgen"))
        .current_dir(dir)
        .args(["--config", "run.toml", "-q"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ccgen(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), TINY).unwrap();
    dir
}

#[test]
fn help_and_usage_errors() {
    let dir = setup();
    assert_eq!(ccgen(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(ccgen(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(ccgen(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        ccgen(dir.path(), &["generate", "--scheme", "beam"])
            .status
            .code(),
        Some(1)
    );
    let printed = ok(dir.path(), &["default-config"]);
    assert!(printed.contains("[[epi.probe]]"));
}

#[test]
fn exit_status_separates_bad_input_from_failures() {
    let dir = setup();
    let out = ccgen(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("vocab.txt") && err.contains("preprocess"),
        "{err}"
    );

    fs::write(dir.path().join("bad.toml"), "[train]\nlearning_rate = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ccgen"))
        .current_dir(dir.path())
        .args(["--config", "bad.toml", "preprocess"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    fs::create_dir_all(dir.path().join("work")).unwrap();
    fs::write(dir.path().join("work/model.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(ccgen(dir.path(), &["generate"]).status.code(), Some(2));
}

#[test]
fn toy_pipeline_through_the_binary() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["synth-data"]);
    ok(d, &["preprocess"]);
    ok(d, &["pretrain-encoder"]);
    ok(d, &["train"]);
    ok(d, &["generate"]);
    let table = ok(d, &["evaluate"]);
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.contains("Beam (k=2)") && table.contains("Greedy"));

    // Same inputs and seed: byte-identical outputs.
    let work = d.join("work");
    let before = fs::read(work.join("gen/prob-t0.5.jsonl")).unwrap();
    let report = fs::read(work.join("report.jsonl")).unwrap();
    ok(d, &["generate", "--scheme", "probabilistic", "--t", "0.5"]);
    ok(d, &["evaluate"]);
    assert_eq!(fs::read(work.join("gen/prob-t0.5.jsonl")).unwrap(), before);
    assert_eq!(fs::read(work.join("report.jsonl")).unwrap(), report);

    ok(d, &["generate", "--scheme", "beam", "--k", "1"]);
    assert_eq!(
        fs::read(work.join("gen/beam-k1.jsonl")).unwrap(),
        fs::read(work.join("gen/greedy.jsonl")).unwrap()
    );

    // Every row carries the fingerprint recorded in the manifest.
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(work.join("evaluate.manifest.json")).unwrap()).unwrap();
    let fp = manifest["fingerprint"].as_str().unwrap();
    for line in String::from_utf8(report).unwrap().lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(row["fingerprint"], fp);
        assert_eq!(row["seed"], 5);
    }

    let same = ok(
        d,
        &[
            "evaluate",
            "--reference",
            "work/test.jsonl",
            "--candidate",
            "work/test.jsonl",
        ],
    );
    let row = same.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[0], "test");
    for v in &cols[1..] {
        assert_eq!(*v, "1.0000", "{same}");
    }
}
