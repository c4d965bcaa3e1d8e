use std::path::Path;
use std::process::{Command, Output};

use fedpg_core::experiment::{read_csv, RunStatus, MANIFEST_FILE};
use fedpg_core::{Algorithm, RunConfig, SuiteManifest};

fn fedpg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedpg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn fedpg")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_csv_manifest_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedpg(
        &[
            "run",
            "--env_name",
            "chain",
            "--num_worker",
            "4",
            "--multiple_run",
            "2",
            "--seed",
            "3",
            "--log_dir",
            "logs",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir = dir.path().join("logs/chain_fedpg_br_k4");
    let manifest = SuiteManifest::read(&run_dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.runs.len(), 2);
    assert_eq!(manifest.num_agents, 4);
    for (entry, seed) in manifest.runs.iter().zip([3, 4]) {
        assert_eq!(entry.seed, seed);
        assert_eq!(entry.status, RunStatus::Ok);
        let records = read_csv(&run_dir.join(format!("seed_{seed}.csv"))).unwrap();
        assert_eq!(records.len(), entry.rounds + 1);
        assert!(run_dir.join(format!("seed_{seed}_final.json")).exists());
    }
    assert!(stdout(&out).contains("manifest:"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::chain(Algorithm::FedGpomdp, 3);
    cfg.run_name = "from_file".into();
    cfg.max_trajectories = 40;
    std::fs::write(dir.path().join("run.toml"), cfg.to_toml_string().unwrap()).unwrap();
    let out = fedpg(
        &[
            "run",
            "--config",
            "run.toml",
            "--num_worker",
            "5",
            "--num_Byzantine",
            "1",
            "--attack_type",
            "sign-flip",
            "--log_dir",
            ".",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = SuiteManifest::read(&dir.path().join("from_file").join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.num_agents, 5);
    assert_eq!(manifest.num_byzantine, 1);
    assert_eq!(manifest.algorithm, Algorithm::FedGpomdp.to_string());
    assert_eq!(manifest.config.max_trajectories, 40);
}

#[test]
fn unknown_algorithm_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedpg(&["run", "--env_name", "chain", "--algo", "sgd"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn summarize_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let run = fedpg(
        &[
            "run",
            "--env_name",
            "chain",
            "--num_worker",
            "3",
            "--multiple_run",
            "3",
            "--run_name",
            "s",
            "--log_dir",
            ".",
        ],
        dir.path(),
    );
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let out = fedpg(&["summarize", "s", "--n_boot", "200"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let curve = std::fs::read_to_string(dir.path().join("s/curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trajectories,mean_return,ci_low,ci_high,n_runs"
    );
    assert!(lines.all(|l| l.ends_with(",3")));
}

#[test]
fn verify_quick_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedpg(&["verify"], dir.path());
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("0 failed"));
    assert!(!text.contains("FAIL "));
}
