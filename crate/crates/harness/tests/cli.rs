//! End-to-end checks of the `cqn-as` binary: exit codes, artifact layout and
//! run-to-run determinism, all on deliberately tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

use cqn_as_harness::log::{read_csv_file, rows_match_ignoring_wall};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cqn-as"));
    c.env_remove("CQN_AS_OUT_DIR");
    c
}

/// Overrides shared by every training invocation in this file; small enough
/// that a run takes well under a second.
fn tiny(out_dir: &Path) -> Vec<String> {
    [
        "--env", "reach2d", "--total_steps", "60", "--eval_every", "30",
        "--eval_episodes", "2", "--demo_count", "6", "--horizon", "2",
        "--levels", "2", "--bins", "3", "--atoms", "11", "--hidden", "16",
        "--batch", "8", "--early_stop", "1.1", "--warmup", "20",
    ]
    .into_iter()
    .map(String::from)
    .chain(["--out_dir".into(), out_dir.display().to_string()])
    .collect()
}

fn run(args: &[String]) -> Output {
    bin().args(args).output().expect("spawning the binary")
}

fn train_dir(out_dir: &Path) -> std::path::PathBuf {
    let mut dirs: Vec<_> = std::fs::read_dir(out_dir)
        .expect("out dir exists")
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected exactly one run directory");
    dirs.pop().unwrap()
}

#[test]
fn unknown_config_key_exits_2() {
    let out = bin().args(["train", "--no_such_knob", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("no_such_knob"), "stderr: {msg}");
}

#[test]
fn invalid_value_exits_2() {
    let out = bin().args(["train", "--gamma", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    for dir in [&a, &b] {
        let mut args = vec!["train".to_string()];
        args.extend(tiny(dir));
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{out:?}");
    }

    let (da, db) = (train_dir(&a), train_dir(&b));
    for d in [&da, &db] {
        assert!(d.join("config.txt").is_file());
        assert!(d.join("log.csv").is_file());
        assert!(d.join("params.ckpt").is_file());
    }
    let (ra, rb) = (
        read_csv_file(&da.join("log.csv")).unwrap(),
        read_csv_file(&db.join("log.csv")).unwrap(),
    );
    assert_eq!(ra.len(), 2, "two eval rounds expected");
    assert!(rows_match_ignoring_wall(&ra, &rb), "runs diverged:\n{ra:?}\n{rb:?}");
    assert_eq!(
        std::fs::read(da.join("params.ckpt")).unwrap(),
        std::fs::read(db.join("params.ckpt")).unwrap(),
        "checkpoints differ between identically seeded runs"
    );
}

#[test]
fn eval_reads_back_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train".to_string()];
    args.extend(tiny(tmp.path()));
    assert_eq!(run(&args).status.code(), Some(0));

    let ckpt = train_dir(tmp.path()).join("params.ckpt");
    let mut args = vec!["eval".to_string(), "--ckpt".into(), ckpt.display().to_string()];
    args.extend(tiny(tmp.path()));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stdout);
    assert!(msg.contains("success rate"), "stdout: {msg}");
}

#[test]
fn runaway_learning_rate_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train".to_string()];
    args.extend(tiny(tmp.path()));
    args.extend(["--lr".into(), "1e9".into()]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("diverged"), "stderr: {msg}");
}

#[test]
fn out_dir_env_var_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let (cli_dir, env_dir) = (tmp.path().join("cli"), tmp.path().join("env"));
    let mut args = vec!["train".to_string()];
    args.extend(tiny(&cli_dir));
    let out = bin()
        .env("CQN_AS_OUT_DIR", &env_dir)
        .args(&args)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(env_dir.is_dir(), "env-var directory missing");
    assert!(!cli_dir.exists(), "flag directory should not have been used");
}

#[test]
fn gen_demos_then_rtg_exp() {
    let tmp = tempfile::tempdir().unwrap();
    let demo_dir = tmp.path().join("demos");
    let mut args = vec![
        "gen-demos".to_string(),
        "--demo_dir".into(),
        demo_dir.display().to_string(),
    ];
    args.extend(tiny(tmp.path()));
    assert_eq!(run(&args).status.code(), Some(0));
    let eps = std::fs::read_dir(&demo_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ep")
        })
        .count();
    assert_eq!(eps, 6);

    let mut args = vec![
        "rtg-exp".to_string(),
        "--ks".into(),
        "1,2".into(),
        "--demo_dir".into(),
        demo_dir.display().to_string(),
    ];
    args.extend(tiny(tmp.path()));
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let table = std::fs::read_to_string(tmp.path().join("rtg.csv")).unwrap();
    assert!(table.starts_with("k,val_l1\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn plot_regroups_existing_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train".to_string()];
    args.extend(tiny(tmp.path()));
    assert_eq!(run(&args).status.code(), Some(0));

    let csv = train_dir(tmp.path()).join("log.csv");
    let svg = tmp.path().join("curves.svg");
    let out = bin()
        .args(["plot", "--out"])
        .arg(&svg)
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg"), "not an SVG: {}", &body[..40.min(body.len())]);
}
