//! Black-box tests of the `nrelaggs` binary: exit codes, stdout shape, and
//! reproducibility, exactly as a shell user sees them.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nrelaggs"))
}

fn trains_schema() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/trains/schema.json")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for sub in ["ingest", "propositionalize", "train", "evaluate", "extract-features"] {
        assert!(text.contains(sub), "--help must mention `{sub}`:\n{text}");
    }
}

#[test]
fn ingest_prints_the_database_summary() {
    let out = bin().args(["ingest", "--schema"]).arg(trains_schema()).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for needle in ["trains", "cars", "target: trains.direction", "majority accuracy: 0.5000"] {
        assert!(text.contains(needle), "missing `{needle}` in:\n{text}");
    }
}

#[test]
fn unknown_engine_is_a_usage_error() {
    let out = bin()
        .args(["evaluate", "--engine", "perceptron", "--schema"])
        .arg(trains_schema())
        .arg("--output-dir")
        .arg(tempfile::tempdir().unwrap().path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
    assert!(stderr(&out).contains("perceptron"));
}

#[test]
fn runtime_failures_exit_one_with_a_message() {
    let out = bin()
        .args(["ingest", "--schema", "/nonexistent/schema.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error:"), "stderr: {}", stderr(&out));

    // engines without parameters cannot be trained ahead of time
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--engine", "majority", "--schema"])
        .arg(trains_schema())
        .arg("--output")
        .arg(dir.path().join("m.nrck"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("majority"), "stderr: {}", stderr(&out));
}

#[test]
fn propositionalize_is_reproducible_from_the_shell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("features.csv");
    let run = || {
        let out = bin()
            .args(["propositionalize", "--schema"])
            .arg(trains_schema())
            .arg("--output")
            .arg(&csv)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    };
    run();
    let first = std::fs::read(&csv).unwrap();
    let manifest = std::fs::read(dir.path().join("features.csv.manifest.json")).unwrap();
    run();
    assert_eq!(first, std::fs::read(&csv).unwrap(), "feature CSV must be byte-identical");
    assert_eq!(
        manifest,
        std::fs::read(dir.path().join("features.csv.manifest.json")).unwrap(),
        "manifest must be byte-identical"
    );
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 21, "header plus 20 trains");
    assert!(text.lines().next().unwrap().starts_with("f0,"));
}

#[test]
fn train_writes_a_checkpoint_the_binary_can_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.nrck");
    let out = bin()
        .args(["train", "--engine", "nrelaggs", "--epochs", "5", "--seed", "9", "--schema"])
        .arg(trains_schema())
        .arg("--output")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("best loss"), "train should report progress:\n{}", stdout(&out));

    let emb = dir.path().join("emb.csv");
    let out = bin()
        .args(["extract-features", "--layer", "hidden0", "--schema"])
        .arg(trains_schema())
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--output")
        .arg(&emb)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&emb).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.lines().next().unwrap().starts_with("e0,"));
}
