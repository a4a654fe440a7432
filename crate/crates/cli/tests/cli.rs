use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mmc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmc"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mmc")
}

const TINY: &str = r#"
[grid]
n = 8
length = 8.0

[scheme]
dt = 0.01
preset = "certified"

[initial]
kind = "example2"
seed = 11

[run]
t_final = 0.05
output_dir = "out"
"#;

#[test]
fn verify_exits_zero_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmc(&["verify"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("checks passed"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmc(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[grid]\nn = 8\nwidth = 3\n").unwrap();
    let out = mmc(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmc(&["run", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn t_final_off_the_time_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), TINY.replace("t_final = 0.05", "t_final = 0.055")).unwrap();
    let out = mmc(&["run", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tiny_run_writes_csv_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), TINY).unwrap();
    let out = mmc(&["run", "--config", "c.toml", "--snapshots", "snaps"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let records = mmc_core::io::read_diag_csv(&dir.path().join("out/diagnostics.csv")).unwrap();
    assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
    let snap = mmc_core::io::load_snapshot(&dir.path().join("snaps/step_00000005.snap")).unwrap();
    assert_eq!(snap.step, 5);
    assert!((snap.time - 0.05).abs() < 1e-12);

    // a rerun replaces rather than appends
    let again = mmc(&["run", "--config", "c.toml"], dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(mmc_core::io::read_diag_csv(&dir.path().join("out/diagnostics.csv")).unwrap().len(), 6);
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mmc"))
        .arg("verify")
        .env("MMC_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            mmc_core::io::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
