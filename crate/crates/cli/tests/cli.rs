//! Argument handling and exit codes of the binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mctsnet")).args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
    assert_eq!(code(&run(&["train", "--help"], dir.path())), 0);
    assert_eq!(code(&run(&[], dir.path())), 1);
    assert_eq!(code(&run(&["fly"], dir.path())), 1);
    assert_eq!(code(&run(&["train", "--no-such-flag"], dir.path())), 1);
    assert_eq!(code(&run(&["gen-levels", "--width", "2"], dir.path())), 1);
    assert_eq!(code(&run(&["gen-levels", "--set", "colour=blue"], dir.path())), 1);
    assert_eq!(code(&run(&["gen-levels", "--set", "nonsense"], dir.path())), 1);
    assert_eq!(code(&run(&["gen-levels", "--config", "missing.cfg"], dir.path())), 1);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--dataset", "absent.jsonl"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    std::fs::write(dir.path().join("bad.jsonl"), "not json\n").unwrap();
    assert_eq!(code(&run(&["train", "--dataset", "bad.jsonl"], dir.path())), 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# small boards\nwidth=5\nheight=5\nlevels=2\nseed=4\nout_dir=from-config\n").unwrap();
    let out = run(&["gen-levels", "--config", "run.cfg", "-n", "3", "--out-dir", "from-flag"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("from-config").exists());
    let text = std::fs::read_to_string(dir.path().join("from-flag/levels.xsb")).unwrap();
    let boards: Vec<&str> = text.split("\n\n").map(str::trim).filter(|b| !b.is_empty() && !b.starts_with(';')).collect();
    assert_eq!(boards.len(), 3);
    assert!(boards.iter().all(|b| b.lines().all(|l| l.len() <= 5)));
}
