use std::fs;
use std::process::{Command, Output};

fn eki(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eki")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn presets_are_listed() {
    let out = eki(&["list-presets"]);
    assert!(out.status.success());
    let names = stdout(&out);
    for p in ["heat_vi_single", "heat_dimvi_batch", "heat_novi_eki", "tiny"] {
        assert!(names.lines().any(|l| l == p), "{p} missing");
    }
}

#[test]
fn run_then_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("tiny");
    let out = eki(&["run", "tiny", "--runs", "2", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "config.toml", "aggregate.csv", "run_000.csv", "run_001.csv"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let before = fs::read(out_dir.join("aggregate.csv")).unwrap();
    fs::remove_file(out_dir.join("aggregate.csv")).unwrap();
    assert!(eki(&["aggregate", out_dir.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(out_dir.join("aggregate.csv")).unwrap(), before);

    // the written config reproduces itself
    let written = out_dir.join("config.toml");
    assert!(eki(&["validate", written.to_str().unwrap()]).status.success());
}

#[test]
fn shown_preset_is_a_valid_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let shown = eki(&["show", "heat_novi_batch_desk"]);
    assert!(shown.status.success());
    let path = dir.path().join("c.toml");
    fs::write(&path, shown.stdout).unwrap();
    let out = eki(&["validate", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("heat_novi_batch_desk: ok"));
}

#[test]
fn configuration_errors_exit_with_two() {
    assert_eq!(eki(&["validate", "no_such_preset"]).status.code(), Some(2));
    assert_eq!(eki(&["run", "tiny", "--t-end", "-1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\nmethod = \"sometimes\"\n").unwrap();
    let out = eki(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn aggregate_of_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let code = eki(&["aggregate", dir.path().to_str().unwrap()]).status.code();
    assert!(matches!(code, Some(2) | Some(3)), "{code:?}");
}
