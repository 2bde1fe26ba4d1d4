use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lvfront(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvfront"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const MODEL: &str = "[model]\nd = 1.0\nr = 1.0\na = 2.0\nb = 3.0\n[time]\nt_end = 0.0\n";

#[test]
fn roots_succeeds_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", MODEL);
    let out = dir.path().join("out");
    let o = lvfront(&["roots", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("manifest.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("Ok"));
}

#[test]
fn preset_prints_a_parseable_config() {
    let o = lvfront(&["preset", "theorem1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(lvfront::config::parse_config(&text).is_ok());
    assert_ne!(lvfront(&["preset", "nope"]).status.code(), Some(0));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &MODEL.replace("d = 1.0", "d = -1.0"));
    let o = lvfront(&[
        "roots",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("positivity"));
    let o = lvfront(&["sweep", "--config", &write(dir.path(), "m.toml", MODEL)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failing_supersub_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{MODEL}[supersub]\nfamily = \"lower_simple\"\np0 = 5.0\nq0 = 0.5\nrate = 0.3\nshift0 = 0.0\nshift1 = 1.0\n[lattice]\nt_max = 20.0\n"
    );
    let cfg = write(dir.path(), "c.toml", &text);
    let o = lvfront(&[
        "supersub-verify",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!("{MODEL}[sweep]\nb = [2.0, 3.0, 4.0]\nsimulate = false\n"),
    );
    let out = dir.path().join("o");
    let o = lvfront(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
