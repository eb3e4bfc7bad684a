//! End-to-end runs of the `qvi-lab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qvi-lab");

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("QVI_LAB_OUT")
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

/// Teleport on a coarser grid with fewer paths.
fn small_teleport(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(config("teleport.cfg"))
        .unwrap()
        .replace("nx = 65", "nx = 33")
        .replace("nt = 64", "nt = 32")
        .replace("paths = 10000", "paths = 400");
    let p = dir.join("small.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn validate_zero_model_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("zero.cfg");
    let o = run(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("validation.kv").exists());
}

#[test]
fn sandwich_writes_three_fields_with_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_teleport(tmp.path());
    let out = tmp.path().join("out");
    let o = run(&["sandwich", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["lower.csv", "upper.csv", "direct.csv", "gap.txt", "gap.kv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    for (name, body) in files(&out) {
        let text = String::from_utf8(body).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# qvi-lab "), "{name}: {first}");
        let hex = first.split("config-sha256=").nth(1).unwrap();
        assert_eq!(hex.len(), 64, "{name}: {first}");
    }
}

#[test]
fn bad_box_is_a_grid_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("broken.cfg");
    let o = run(&["solve", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("grid"), "{err}");
}

#[test]
fn config_typo_names_section_and_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("zero.cfg")).unwrap().replace("[grid]", "[grid]\nnxx = 3");
    let p = tmp.path().join("typo.cfg");
    fs::write(&p, text).unwrap();
    let o = run(&["solve", p.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("[grid]") && err.contains("byte offset"), "{err}");
}

#[test]
fn output_root_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("zero.cfg");
    let o = Command::new(BIN)
        .args(["validate", cfg.to_str().unwrap()])
        .env("QVI_LAB_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("zero").join("validation.txt").exists());
}

#[test]
fn free_loops_fail_verification_with_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("trap.cfg");
    let o = run(&["verify", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let loops = fs::read_to_string(tmp.path().join("loops.kv")).unwrap();
    assert!(loops.contains("violations=2\n"), "{loops}");
    assert!(loops.contains("b0-e0 cost=0"), "{loops}");
}

#[test]
fn artifacts_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_teleport(tmp.path());
    for cmd in ["sandwich", "extract-strategy", "simulate"] {
        let mut outs = Vec::new();
        for threads in ["1", "3"] {
            let out = tmp.path().join(format!("{cmd}-{threads}"));
            let o = run(&[cmd, cfg.to_str().unwrap(), "--threads", threads], &out);
            assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            outs.push(files(&out));
        }
        assert!(!outs[0].is_empty());
        assert_eq!(outs[0], outs[1], "{cmd} artifacts differ");
    }
}
