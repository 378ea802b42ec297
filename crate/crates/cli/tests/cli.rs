use std::path::Path;
use std::process::{Command, Output};

fn llnsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llnsim"))
        .args(args)
        .output()
        .expect("spawn llnsim")
}

fn write_cfg(dir: &Path, body: &str) -> String {
    let p = dir.join("short.cfg");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SHORT: &str = "# one hop, a few seconds\nhops = 1\nduration_s = 6\nwarmup_s = 1\n";

#[test]
fn run_writes_bundle_and_seed_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SHORT);
    let out = tmp.path().join("a");
    let o = llnsim(&["run", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "summary.csv", "flows.csv", "intervals.csv", "links.csv", "nodes.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("seed = 9\n"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("goodput"));
}

#[test]
fn run_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SHORT);
    let read = |d: &str| {
        let out = tmp.path().join(d);
        assert!(llnsim(&["run", &cfg, "--out", out.to_str().unwrap()]).status.success());
        std::fs::read(out.join("summary.csv")).unwrap()
    };
    assert_eq!(read("x"), read("y"));
}

#[test]
fn bad_config_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "hops = 2\nmss_frames = lots\n");
    let o = llnsim(&["run", &cfg, "--out", tmp.path().join("z").to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn sweep_writes_combined_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SHORT);
    let out = tmp.path().join("s");
    let o = llnsim(&[
        "sweep",
        &cfg,
        "--axis",
        "mss_frames",
        "--values",
        "1,3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("mss_frames=3").join("summary.csv").exists());
}

#[test]
fn sweep_rejects_unknown_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SHORT);
    let o = llnsim(&["sweep", &cfg, "--axis", "colour", "--values", "1"]);
    assert!(!o.status.success());
}

#[test]
fn model_prints_grid() {
    let o = llnsim(&["model", "--mss", "462", "--rtt", "100,200", "--w", "4", "--p", "0.01"]);
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert_eq!(s.lines().count(), 3);
    assert!(s.starts_with("mss_bytes,rtt_ms,w,p,ell,lln_bps,classic_bps\n"));
}

#[test]
fn quick_validate_passes() {
    let o = llnsim(&["validate", "--quick"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}
