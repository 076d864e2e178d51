//! End-to-end runs of the `icgps` binary: exit codes, artifacts, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn icgps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icgps"))
        .args(args)
        .env_remove("ICGPS_OUT")
        .env_remove("ICGPS_THREADS")
        .output()
        .expect("spawn icgps")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const TINY: &str = r#"
seed = 9
[[prior.components]]
model = { family = "weibull", rate = { uniform = [0.3, 0.6] }, shape = { fixed = 1.5 } }
[flow]
bins = 4
[corpus]
episodes = 10
horizon = 20
[train]
epochs = 2
hidden = [4]
"#;

#[test]
fn minimal_config_trains_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", TINY);
    let out = tmp.path().join("out");
    let o = icgps(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("model.ckpt").is_file());
    assert!(out.join("train_report.csv").is_file());
    assert!(out.join("config.resolved.toml").is_file());
}

#[test]
fn missing_prior_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "seed = 1\n");
    let o = icgps(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prior"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &format!("{TINY}epochz = 3\n"));
    let o = icgps(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochz"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = icgps(&["train", "--config", "/nonexistent/c.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_without_checkpoint_is_a_missing_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("q1-smoke.toml");
    let o = icgps(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("model.ckpt"));
}

#[test]
fn ingest_reports_the_offending_row() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = write(
        tmp.path(),
        "bad.csv",
        "episode_id,t,order,sales,censored\na,1,3,2,0\na,2,3,3,1\na,3,3,2.5,1\n",
    );
    let o = icgps(&["ingest", csv.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("row 4"), "{}", stderr(&o));
}

#[test]
fn ingest_normalizes_the_bundled_store() {
    let tmp = tempfile::tempdir().unwrap();
    let src = configs().join("../data/store.csv");
    let o = icgps(&["ingest", src.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(src).unwrap(), std::fs::read(tmp.path().join("store.csv")).unwrap());
}

#[test]
fn check_passes_refuses_overwrite_and_catches_an_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = icgps(&["check", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = std::fs::read_to_string(tmp.path().join("diagnostics.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 12);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");

    let again = icgps(&["check", "--out", out]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr(&again).contains("--force"));

    let faulty = icgps(&["check", "--out", out, "--force", "--inject-fault", "grad-sign"]);
    assert_eq!(faulty.status.code(), Some(1));
    let text = std::fs::read_to_string(tmp.path().join("diagnostics.csv")).unwrap();
    assert!(text.contains("gradient.finite_difference") && text.contains(",false"));
}

#[test]
fn smoke_run_writes_every_step_and_training_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("q1-smoke.toml");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = icgps(&["train", "--config", cfg, "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());

    let o = icgps(&["run", "--config", cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let results = std::fs::read_to_string(a.join("results.csv")).unwrap();
    // icgps plus three baselines, two trials, 60 rounds.
    assert_eq!(results.lines().count(), 1 + 4 * 2 * 60);
    assert!(a.join("curves.csv").is_file());
    assert!(a.join("plots/q1-gamma0.9.svg").is_file());
    assert!(a.join("diagnostics.csv").is_file());
}
