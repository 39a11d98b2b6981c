use grasp::io;
use grasp::pipeline::{self, ExperimentConfig, RunManifest};
use grasp::GraspError;

fn smoke() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::smoke();
    cfg.seeds = vec![3];
    cfg
}

fn hashes(m: &RunManifest, stage: &str) -> Vec<String> {
    m.stage(m.runs[0].seed, stage)
        .unwrap()
        .artifacts
        .iter()
        .map(|a| a.sha256.clone())
        .collect()
}

#[test]
fn run_seed_is_deterministic() {
    let cfg = smoke();
    let a = pipeline::run_seed(&cfg, 3).unwrap();
    let b = pipeline::run_seed(&cfg, 3).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.partition, b.partition);
    assert_eq!(a.outcome.ledger, b.outcome.ledger);
    assert_eq!(a.outcome.losses, b.outcome.losses);
    assert_eq!(a.generated, b.generated);
    assert_eq!(a.report, b.report);
}

#[test]
fn manifest_lists_every_stage_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = pipeline::run_pipeline(&smoke(), dir.path()).unwrap();
    let stages: Vec<&str> = m.runs[0].stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(
        stages,
        [
            "generate",
            "pretrain",
            "partition",
            "train",
            "sample",
            "evaluate"
        ]
    );
    for s in &m.runs[0].stages {
        for a in &s.artifacts {
            let path = dir.path().join(&a.path);
            assert_eq!(
                pipeline::sha256_file(&path).unwrap(),
                a.sha256,
                "{}",
                a.path
            );
        }
    }
    let reread: RunManifest = io::read_json(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(reread, m);
    let cfg = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(cfg.hash(), m.config_hash);
}

#[test]
fn resample_ablation_changes_only_training_onward() {
    let on = smoke();
    let mut off = smoke();
    off.training.resample = false;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = pipeline::run_pipeline(&on, a.path()).unwrap();
    let mb = pipeline::run_pipeline(&off, b.path()).unwrap();
    assert_ne!(ma.config_hash, mb.config_hash);
    for stage in ["generate", "pretrain", "partition"] {
        assert_eq!(hashes(&ma, stage), hashes(&mb, stage), "{stage}");
    }
    assert_ne!(hashes(&ma, "train"), hashes(&mb, "train"));
}

#[test]
fn comparing_a_run_with_itself_repeats_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = pipeline::run_pipeline(&smoke(), dir.path()).unwrap();
    let csv = pipeline::compare_runs(&[m.clone(), m]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], pipeline::COMPARE_HEADER);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2]);
}

#[test]
fn artifacts_round_trip() {
    let cfg = smoke();
    let out = pipeline::run_seed(&cfg, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("checkpoint.json");
    io::write_checkpoint(&cp, &out.outcome.state).unwrap();
    assert_eq!(io::read_checkpoint(&cp).unwrap(), out.outcome.state);
    let pp = dir.path().join("partition.txt");
    io::write_partition(&pp, &out.partition).unwrap();
    assert_eq!(io::read_partition(&pp, &out.train).unwrap(), out.partition);
    let cc = dir.path().join("corpus.txt");
    io::write_corpus(&cc, &out.generated).unwrap();
    assert_eq!(io::read_corpus(&cc).unwrap(), out.generated);
}

#[test]
fn failing_stage_is_named_and_keeps_earlier_artifacts() {
    let mut cfg = smoke();
    // more neighbours than the whole test set holds
    cfg.metrics.k = 10_000;
    let dir = tempfile::tempdir().unwrap();
    let e = pipeline::run_pipeline(&cfg, dir.path()).unwrap_err();
    assert!(
        matches!(e, GraspError::Stage { ref stage, .. } if stage == "evaluate"),
        "{e:?}"
    );
    assert!(dir.path().join("seed-3/generated.txt").exists());
    assert!(!dir.path().join("seed-3/metrics.json").exists());
    assert!(!dir.path().join("manifest.json").exists());
}
