use std::path::{Path, PathBuf};
use std::process::Command;

fn sim() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sim"));
    c.env_remove("GMCLAB_OUT_DIR").env_remove("GMCLAB_WORKERS");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn shipped_potential_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim()
        .args(["potential", "--config"])
        .arg(config("potential.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "operator.txt", "potential.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn out_dir_and_workers_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let st = sim()
        .args(["sample", "--config"])
        .arg(config("sample.toml"))
        .env("GMCLAB_OUT_DIR", dir.path())
        .env("GMCLAB_WORKERS", "1")
        .args(["--seed", "3"])
        .status()
        .unwrap();
    assert!(st.success());
    let m = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(m.contains("\"seed\": 3"), "{m}");
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "kind = \"sample\"\nseed = 1\nbeta = 1.2\neps = [0.1]\n[grid]\nT = 1.0\ncells = 16\n").unwrap();
    let out = sim().args(["sample", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn kind_mismatch_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let st = sim()
        .args(["solve", "--config"])
        .arg(config("potential.toml"))
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn unknown_kind_is_a_usage_error() {
    let st = sim().args(["nonsense", "--config", "x.toml"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}
