use std::fs;
use std::path::Path;

use hashattack::config::ExperimentConfig;
use hashattack::experiment::{self, run_experiment, Experiment, Stage};
use hashattack::{CheckpointError, Error};

fn smoke() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf");
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn smoke_runs_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&Experiment::new(smoke(), a.path())).unwrap();
    run_experiment(&Experiment::new(smoke(), b.path())).unwrap();
    let read = |d: &Path| fs::read(d.join(experiment::REPORT)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    let report: serde_json::Value = serde_json::from_slice(&read(a.path())).unwrap();
    let methods: Vec<&str> = report["rows"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["Original", "Noise", "P2P", "DHTA", "ProS-GAN", "Anchor-code", "Prototype-code"]);
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().ends_with(".partial"), "{name:?}");
    }

    let exp = Experiment::new(smoke(), a.path());
    let x = exp.dataset().unwrap().query[0].image.clone();
    let first = exp.hash_model().unwrap().encode(&x).unwrap();
    assert_eq!(first, exp.hash_model().unwrap().encode(&x).unwrap());
}

#[test]
fn a_failed_stage_leaves_a_marker_and_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(smoke(), dir.path());
    let err = exp.run_stage(Stage::TrainHash).unwrap_err();
    assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "train-hash"), "{err}");
    assert!(dir.path().join("train-hash.partial").exists());

    exp.run_stage(Stage::GenData).unwrap();
    exp.run_stage(Stage::TrainHash).unwrap();
    assert!(!dir.path().join("train-hash.partial").exists());
}

#[test]
fn checkpoints_refuse_the_wrong_code_length() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(smoke(), dir.path());
    exp.run_stage(Stage::GenData).unwrap();
    exp.run_stage(Stage::TrainHash).unwrap();
    let mut cfg = smoke();
    cfg.code_length += 4;
    let err = Experiment::new(cfg, dir.path()).hash_model().unwrap_err();
    assert!(matches!(err, Error::Checkpoint(CheckpointError::Shape { .. })), "{err}");
}
