//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[link]\nsymbols = 2000\nduration = 0.01\n\n[mu_sweep]\nmu = [0.1, 0.001, 0.0001]\n";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddm-qkd")).current_dir(dir).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn mu_sweep_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = run(dir.path(), &["mu-sweep", "--config", &cfg, "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mu,sifted_rate_bps,qber_time,qber_time_ci,qber_phase,qber_phase_ci,visibility,secret_rate_bps,config_hash"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    let hash = rows[0].rsplit(',').next().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(rows.iter().all(|r| r.split(',').count() == 9 && r.ends_with(hash)));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for exp in ["mu-sweep", "stability"] {
        let args = [exp, "--config", &cfg, "--seed", "9", "--trials", "2", "--out"];
        let a = run(dir.path(), &[&args[..], &["a.csv"]].concat());
        let b = run(dir.path(), &[&args[..], &["b.csv"]].concat());
        assert!(a.status.success() && b.status.success());
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        assert_eq!(read("a.csv"), read("b.csv"), "{exp}");
    }
}

#[test]
fn seed_flag_changes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let hash = |seed: &str| {
        let out = run(dir.path(), &["stability", "--config", &cfg, "--seed", seed]);
        let text = String::from_utf8(out.stdout).unwrap();
        text.lines().nth(1).unwrap().rsplit(',').next().unwrap().to_string()
    };
    assert_ne!(hash("1"), hash("2"));
}

#[test]
fn errors_use_kind_prefix_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[link]\nprotocol = \"QPSK\"\n").unwrap();
    let cases: [(&[&str], &str); 3] = [
        (&["mu-sweep", "--config", bad.to_str().unwrap()], "error: config: "),
        (&["mu-sweep", "--config", "missing.toml"], "error: config: "),
        (&["extinction", "--trials", "0"], "error: config: "),
    ];
    for (args, prefix) in cases {
        let out = run(dir.path(), args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.starts_with(prefix) && err.lines().count() == 1, "{args:?}: {err}");
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn dps_extinction_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dps.toml");
    std::fs::write(&cfg, "[link]\nprotocol = \"DPS\"\n").unwrap();
    let out = run(dir.path(), &["extinction", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: config: extinction experiment needs COW or BB84"));
}
