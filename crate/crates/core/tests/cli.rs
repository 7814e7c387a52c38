use std::path::{Path, PathBuf};

use qsteer::experiment::cli::exit_status;
use qsteer::experiment::{replay, run_evaluation, ExperimentConfig, RunRecord};

fn qsteer(args: &[&str]) -> u8 {
    exit_status(std::iter::once("qsteer").chain(args.iter().copied()))
}

fn small_qnn_config(out: &Path) -> ExperimentConfig {
    let json = format!(
        r#"{{
            "model": "qnn",
            "dataset": "mnist",
            "steering": "single_qubit",
            "grid": {{"strengths": [0.19634954084936207, 1.5707963267948966], "rounds": [1, 20, 30]}},
            "sweep_size": 40,
            "attacks": [{{"kind": "fgsm", "epsilons": [0.0, 0.1]}}],
            "train": {{"epochs": 2, "train_size": 120, "test_size": 40}},
            "seed": 11,
            "out": {out:?}
        }}"#
    );
    ExperimentConfig::from_json(&json).unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qsteer(&["frobnicate"]), 2);
    assert_eq!(qsteer(&["fetch-data", "--dataset", "cifar"]), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": "vqc", "steering": "single_qubit"}"#).unwrap();
    assert_eq!(qsteer(&["--config", bad.to_str().unwrap(), "train"]), 2);
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(qsteer(&["--config", bad.to_str().unwrap(), "train"]), 2);
    let missing = dir.path().join("missing.json");
    assert_eq!(qsteer(&["--config", missing.to_str().unwrap(), "sweep"]), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_qnn_config(&dir.path().join("run"));
    cfg.data_dir = Some(dir.path().join("no-data-here"));
    let path = write_config(dir.path(), &cfg);
    assert_eq!(qsteer(&["--config", path.to_str().unwrap(), "train"]), 3);
    let empty = dir.path().join("empty-source");
    std::fs::create_dir_all(&empty).unwrap();
    let args = ["fetch-data", "--dataset", "mnist", "--from", empty.to_str().unwrap()];
    assert_eq!(qsteer(&args), 3);
}

#[test]
fn fetch_data_checks_published_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir_all(&src).unwrap();
    for (name, size) in qsteer::experiment::cli::IDX_FILES {
        std::fs::write(src.join(name), vec![0u8; size]).unwrap();
    }
    let dest = dir.path().join("dest");
    let out = dir.path().join("out");
    let args = [
        "--out",
        out.to_str().unwrap(),
        "fetch-data",
        "--dataset",
        "kmnist",
        "--from",
        src.to_str().unwrap(),
        "--dest",
        dest.to_str().unwrap(),
    ];
    assert_eq!(qsteer(&args), 0);
    assert!(dest.join("kmnist/t10k-labels-idx1-ubyte").is_file());
    std::fs::write(src.join("t10k-labels-idx1-ubyte"), vec![0u8; 10]).unwrap();
    assert_eq!(qsteer(&args), 3);
}

#[test]
fn empty_selection_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = small_qnn_config(&out);
    cfg.grid.strengths.truncate(1);
    cfg.grid.rounds = vec![1];
    cfg.budget = 1e-9;
    let path = write_config(dir.path(), &cfg);
    let c = path.to_str().unwrap();
    assert_eq!(qsteer(&["--config", c, "train"]), 0);
    assert_eq!(qsteer(&["--config", c, "evaluate"]), 3, "no adversarial sets yet");
    assert_eq!(qsteer(&["--config", c, "attack"]), 0);
    assert_eq!(qsteer(&["--config", c, "evaluate"]), 4);
}

#[test]
fn fidelity_curve_command_writes_csv_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fid");
    assert_eq!(qsteer(&["--out", out.to_str().unwrap(), "--seed", "3", "fidelity-curve", "--f0", "0.2"]), 0);
    let text = std::fs::read_to_string(out.join("fidelity.csv")).unwrap();
    assert!(text.starts_with("schema_version,J,N,F0,fidelity\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 40);
    let rec = RunRecord::load(&out.join("fidelity-curve.record.json")).unwrap();
    assert_eq!(rec.config.seed, 3);
    assert_eq!(rec.config.fidelity_f0, 0.2);
    assert!(replay(&rec).unwrap().same_result(&rec));
}

#[test]
fn staged_commands_match_one_shot_evaluation_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_qnn_config(&out);
    let path = write_config(dir.path(), &cfg);
    let c = path.to_str().unwrap();
    for cmd in ["train", "sweep", "attack", "evaluate"] {
        assert_eq!(qsteer(&["--config", c, "--threads", "1", cmd]), 0, "{cmd}");
    }
    for f in ["params.json", "sweep.csv", "curve.csv", "train_curve.csv", "adv/fgsm-eps0.1.bin", "adv/fgsm-eps0.1.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let staged = RunRecord::load(&out.join("evaluate.record.json")).unwrap();
    let report = staged.report.as_ref().unwrap();
    assert_eq!(report.recomputed(), *report);
    assert_eq!(report.test_size, 40);

    let mut one_shot = run_evaluation(&staged.config).unwrap();
    one_shot.training = None;
    assert!(one_shot.same_result(&staged));
    assert!(replay(&staged).unwrap().same_result(&staged));

    for stem in ["train", "sweep", "attack"] {
        let rec = RunRecord::load(&out.join(format!("{stem}.record.json"))).unwrap();
        assert!(replay(&rec).unwrap().same_result(&rec), "{stem}");
    }
}
