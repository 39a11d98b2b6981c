use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn grasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grasp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(grasp(&["--help"]).status.code(), Some(0));
    assert_eq!(grasp(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(grasp(&[]).status.code(), Some(1));
    assert_eq!(grasp(&["bogus"]).status.code(), Some(1));
    // missing --out
    assert_eq!(grasp(&["generate"]).status.code(), Some(1));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[partition]\nk = 0\n").unwrap();
    let out = grasp(&["run", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = grasp(&[
        "partition",
        "--config",
        s(&smoke_config()),
        "--corpus",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("garbage.txt");
    std::fs::write(&garbage, "not a corpus\n").unwrap();
    let out = grasp(&[
        "partition",
        "--config",
        s(&smoke_config()),
        "--corpus",
        s(&garbage),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = smoke_config();
    let cfg = s(&cfg);
    assert_ok(&grasp(&["generate", "--config", cfg, "--out", s(d)]));
    let train = d.join("corpus_train.txt");
    let test = d.join("corpus_test.txt");
    assert!(train.exists() && test.exists());

    assert_ok(&grasp(&[
        "partition",
        "--config",
        cfg,
        "--corpus",
        s(&train),
        "--out",
        s(d),
    ]));
    let partition = d.join("partition.txt");
    let composition: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("composition.json")).unwrap())
            .unwrap();
    assert_eq!(composition["k"], 4);

    assert_ok(&grasp(&[
        "train",
        "--config",
        cfg,
        "--corpus",
        s(&train),
        "--partition",
        s(&partition),
        "--out",
        s(d),
    ]));
    let checkpoint = d.join("checkpoint.json");
    for f in ["ledger.json", "conflict_trace.csv", "train_losses.csv"] {
        assert!(d.join(f).exists(), "{f}");
    }

    assert_ok(&grasp(&[
        "sample",
        "--config",
        cfg,
        "--checkpoint",
        s(&checkpoint),
        "--corpus",
        s(&train),
        "--partition",
        s(&partition),
        "--out",
        s(d),
    ]));
    let generated = d.join("generated.txt");

    assert_ok(&grasp(&[
        "evaluate",
        "--config",
        cfg,
        "--generated",
        s(&generated),
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--out",
        s(d),
    ]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("metrics.json")).unwrap()).unwrap();
    let cov = report["all_labels"]["coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));

    assert_ok(&grasp(&[
        "analyze-conflicts",
        "--config",
        cfg,
        "--corpus",
        s(&train),
        "--checkpoint",
        s(&checkpoint),
        "--out",
        s(d),
    ]));
    let conflicts = std::fs::read_to_string(d.join("conflicts.csv")).unwrap();
    assert!(conflicts.contains("label-tier") && conflicts.contains("random"));
}

#[test]
fn run_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = smoke_config();
    let out = grasp(&["run", "--config", s(&cfg), "--out", s(&a)]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("coverage"));
    assert_ok(&grasp(&[
        "run",
        "--config",
        s(&cfg),
        "--seed",
        "1",
        "--out",
        s(&b),
    ]));
    assert!(b.join("seed-1/metrics.json").exists());

    let cmp = dir.path().join("cmp");
    assert_ok(&grasp(&[
        "compare",
        "--out",
        s(&cmp),
        s(&a.join("manifest.json")),
        s(&b.join("manifest.json")),
    ]));
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    // one manifest is a usage error
    let out = grasp(&["compare", "--out", s(&cmp), s(&a.join("manifest.json"))]);
    assert_eq!(out.status.code(), Some(1));
}
