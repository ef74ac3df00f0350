//! Every experiment end to end on tiny models.

use std::collections::BTreeMap;
use std::path::Path;

use icl_spectra::{
    run_experiment, verify_run, Experiment, ExperimentConfig, HarnessError, RunOptions,
};

const TINY: &str = r#"
d = 4
q = 2
k = 8
eval_batch = 24
pool_size = 4
detector_fit = 8
detector_eval = 8
detector_trials = 2
implicit_prompts = 4
noise_sigma = 0.1
vary_q = [1, 2]
scales = [0.5, 1.0, 2.0]
blend_grid = [0.0, 0.5, 1.0]
baselines = ["ols", "ridge", "bayes", "kernel_ridge", "gd"]
gd_iters = 50
train_steps = 30
batch_size = 8
checkpoint_every = 0
model_layers = 1
model_heads = 2
model_hidden = 16
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY, Path::new("tiny.toml")).unwrap()
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "svg"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn every_experiment_runs_and_reruns_byte_identically() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = root.path().join("checkpoints");
    let cfg = tiny();
    for exp in Experiment::ALL {
        let out1 = root.path().join(format!("{}_a", exp.id()));
        let out2 = root.path().join(format!("{}_b", exp.id()));
        let opts = RunOptions {
            checkpoint_dir: Some(ckpt.clone()),
            train_first: true,
            ..RunOptions::new(&out1)
        };
        let m1 = run_experiment(exp, &cfg, &opts).unwrap_or_else(|e| panic!("{}: {e}", exp.id()));
        assert!(!m1.outputs.is_empty(), "{}", exp.id());
        assert_eq!(verify_run(&out1).unwrap(), m1);
        let again = RunOptions {
            out: out2.clone(),
            threads: 3,
            train_first: false,
            ..opts
        };
        let m2 = run_experiment(exp, &cfg, &again).unwrap();
        assert_eq!(m1.outputs, m2.outputs, "{}", exp.id());
        assert_eq!(csv_bytes(&out1), csv_bytes(&out2), "{}", exp.id());
    }
}

#[test]
fn missing_checkpoint_fails_without_a_manifest() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let opts = RunOptions::new(&out);
    let err = run_experiment(Experiment::InputRestriction, &tiny(), &opts).unwrap_err();
    assert!(
        matches!(err, HarnessError::MissingCheckpoint { .. }),
        "{err}"
    );
    assert!(verify_run(&out).is_err());
}

#[test]
fn config_for_another_experiment_is_rejected() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        experiment: Some("exp_blend".into()),
        ..tiny()
    };
    let opts = RunOptions::new(&root.path().join("run"));
    assert!(matches!(
        run_experiment(Experiment::Spectra, &cfg, &opts),
        Err(HarnessError::Config(_))
    ));
}

#[test]
fn noise_experiment_requires_sigma() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        noise_sigma: None,
        ..tiny()
    };
    let opts = RunOptions {
        train_first: true,
        ..RunOptions::new(&root.path().join("run"))
    };
    assert!(matches!(
        run_experiment(Experiment::Noise, &cfg, &opts),
        Err(HarnessError::Config(_))
    ));
}
