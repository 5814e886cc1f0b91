use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gpenkf() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gpenkf"));
    c.env_remove("GPENKF_OUT_DIR");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    gpenkf().args(args).arg("--out-dir").arg(out).output().expect("spawn gpenkf")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/geo_fixture.csv")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["synthetic", "--runs", "2", "--T", "4", "--N", "8", "--K", "9"];

#[test]
fn smoke_synthetic_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synthetic", "--runs", "1", "--T", "1", "--N", "2", "--K", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Liu-West Dual GP-EnKF") && stdout.contains("NMSE"));

    let r = json(&dir.path().join("synthetic_results.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["methods"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(dir.path().join("synthetic_nmse.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("method,step,run,nmse"));
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(dir.path().join("synthetic_elapsed.csv").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run(SMALL, a.path()).status.success());
    let mut args = SMALL.to_vec();
    args.extend(["--threads", "3"]);
    assert!(run(&args, b.path()).status.success());
    for f in ["synthetic_results.json", "synthetic_nmse.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn seed_changes_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run(SMALL, a.path()).status.success());
    let mut args = SMALL.to_vec();
    args.extend(["--seed", "9"]);
    assert!(run(&args, b.path()).status.success());
    assert_ne!(
        fs::read(a.path().join("synthetic_nmse.csv")).unwrap(),
        fs::read(b.path().join("synthetic_nmse.csv")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "[experiment]\nruns = 3\nt = 2\nk = 5\n[filter]\nn_members = 6\ndelta_lw = 0.9\n",
    )
    .unwrap();
    let out = gpenkf()
        .args(["synthetic", "--mode", "liu-west", "--runs", "1", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("synthetic_results.json"));
    assert_eq!(r["experiment"]["runs"], 1);
    assert_eq!(r["experiment"]["t"], 2);
    assert_eq!(r["experiment"]["filter"]["n_members"], 6);
    assert_eq!(r["experiment"]["filter"]["delta_lw"], 0.9);
    assert_eq!(r["methods"][0]["mode"], "dual-liu-west");
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let out = gpenkf()
        .env("GPENKF_OUT_DIR", &target)
        .args(["synthetic", "--mode", "dual", "--runs", "1", "--T", "1", "--N", "2", "--K", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("synthetic_results.json").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[experiment]\nbogus = 1\n").unwrap();
    let bad = bad_cfg.to_str().unwrap();
    for args in [
        vec!["synthetic", "--config", "/definitely/missing.toml"],
        vec!["synthetic", "--config", bad],
        vec!["synthetic", "--N", "1"],
        vec!["synthetic", "--delta", "1.5"],
        vec!["synthetic", "--mode", "kalman"],
        vec!["synthetic", "--centering", "median"],
        vec!["synthetic", "--runs", "0"],
        vec!["frobnicate"],
        vec!["geo"],
        vec!["geo", "--input", "/definitely/missing.csv"],
        vec!["snapshot-inspect", "/definitely/missing.json"],
        vec!["timing", "--T", "0"],
    ] {
        let out = run(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    fs::write(&junk, "{\"format\": \"something else\"}").unwrap();
    let out = run(&["snapshot-inspect", junk.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));

    // 2000 records hold only 20 batches of 100
    let out = run(
        &["geo", "--input", fixture().to_str().unwrap(), "--T", "21", "--K", "4", "--N", "4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn geo_writes_snapshots_and_inspects() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["geo", "--input", fixture().to_str().unwrap(), "--K", "6", "--N", "20", "--T", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read_to_string(dir.path().join("geo_step1.csv")).unwrap();
    assert_eq!(first.lines().next(), Some("longitude,latitude,mean_log,std_log"));
    assert_eq!(first.lines().count(), 1 + 36);
    assert!(dir.path().join("geo_step3.csv").exists());
    let r = json(&dir.path().join("geo_results.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["records"], 2000);
    assert_eq!(r["steps"], 3);
    assert_eq!(r["mode"], "dual");

    let out = gpenkf()
        .arg("snapshot-inspect")
        .arg(dir.path().join("geo_filter.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("step        3"), "{text}");
    assert!(text.contains("36 points in 2-D (lattice)"), "{text}");
    assert!(text.contains("ensemble-mean"), "{text}");
}

#[test]
fn geo_custom_columns() {
    let dir = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(fixture()).unwrap();
    let renamed = dir.path().join("renamed.csv");
    fs::write(&renamed, src.replacen("longitude,latitude,price", "lon,lat,amount", 1)).unwrap();
    let base = ["geo", "--input", renamed.to_str().unwrap(), "--K", "4", "--N", "6", "--T", "1"];
    assert_eq!(run(&base, dir.path()).status.code(), Some(1));
    let mut args = base.to_vec();
    args.extend(["--lon-column", "lon", "--lat-column", "lat", "--value-column", "amount"]);
    let out = run(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn timing_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["timing", "--T", "2,4", "--repeats", "1", "--no-classic", "--N", "5", "--K", "5"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let r = json(&dir.path().join("timing_results.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["table"]["fits"].as_array().unwrap().len(), 3);
}
