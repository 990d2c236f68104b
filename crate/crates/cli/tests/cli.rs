//! End-to-end runs of the `cfc` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("CFC_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("schema_version = 1\n{body}")).unwrap();
    path.to_string_lossy().into_owned()
}

/// Every output except the manifest, which carries timestamps.
fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "manifest.toml")
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn n_bar_line(o: &Output) -> f64 {
    let s = stdout(o);
    let line = s.lines().find(|l| l.starts_with("n_bar = ")).expect("n_bar line");
    line["n_bar = ".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn simulate_writes_manifest_and_spectra() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = cfc(&["simulate"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = n_bar_line(&o);
    assert!((n / 178.8 - 1.0).abs() < 0.01, "{n}");
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("complete = true"));
    assert!(manifest.contains("params_hash"));
    assert!(out.join("simulate.toml").exists());
    assert!(fs::read_dir(&out)
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().starts_with("spectrum_")));
}

#[test]
fn blocked_loop_gives_the_backaction_occupation() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cfc(&["simulate", "--stage", "dbc2"], tmp.path());
    assert!(o.status.success());
    let n = n_bar_line(&o);
    assert!((n / 395.2 - 1.0).abs() < 0.01, "{n}");
}

#[test]
fn invalid_physics_exits_with_validation_code_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[params]\nkappa_in = \"1.1kappa\"\n");
    let out = tmp.path().join("never");
    let o = cfc(&["--config", &cfg, "simulate"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let err = String::from_utf8_lossy(&o.stderr);
    let rec: serde_json::Value = serde_json::from_str(err.trim()).expect("json error record");
    assert_eq!(rec["class"], "validation");
}

#[test]
fn unknown_keys_and_missing_files_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[params]\nkapa = 1.0\n");
    assert_eq!(
        cfc(&["--config", &cfg, "simulate"], &tmp.path().join("a"))
            .status
            .code(),
        Some(2)
    );
    let missing = tmp.path().join("absent.toml");
    let o = cfc(
        &["--config", missing.to_str().unwrap(), "simulate"],
        &tmp.path().join("b"),
    );
    assert_eq!(o.status.code(), Some(4));
    // Sweep without axes is a configuration error.
    assert_eq!(cfc(&["sweep"], &tmp.path().join("c")).status.code(), Some(2));
}

#[test]
fn sweep_outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[sweep.axis1]\nkind = \"omega-tau\"\nlo = 0\nhi = \"pi\"\npoints = 6\n\
         [sweep.axis2]\nkind = \"gamma\"\nlo = \"-pi\"\nhi = \"pi\"\npoints = 7\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(cfc(&["--config", &cfg, "sweep"], &a).status.success());
    assert!(cfc(&["--config", &cfg, "sweep"], &b).status.success());
    let (fa, fb) = (data_files(&a), data_files(&b));
    assert!(fa.iter().any(|(n, _)| n == "heatmap.csv"));
    assert!(fa.iter().any(|(n, _)| n == "mask.csv"));
    assert!(!a.join("INCOMPLETE").exists());
    assert_eq!(fa, fb);
}

#[test]
fn stability_reports_a_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cfc(&["stability"], tmp.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "Stable");
    assert!(tmp.path().join("stability.toml").exists());
}

#[test]
fn reproduce_small_recipe() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cfc(&["reproduce", "fig5a", "--resolution", "5"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("fig5a_report.toml").exists());
    let manifest = fs::read_to_string(tmp.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("reproduce fig5a"));
}

#[test]
fn unknown_recipe_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cfc(&["reproduce", "fig9"], &tmp.path().join("x"));
    assert!(!o.status.success());
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn fit_round_trip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    for stage in ["dbc1", "dbc2", "cfc"] {
        let o = cfc(&["simulate", "--stage", stage], &sim.join(stage));
        assert!(o.status.success());
    }
    let path = |s: &str| sim.join(s).join("spectrum_S_Ydet.csv").to_string_lossy().into_owned();
    assert!(Path::new(&path("dbc1")).exists(), "spectrum file name changed");
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[fit]\ndbc1 = \"{}\"\ndbc2 = \"{}\"\ncfc = \"{}\"\n",
            path("dbc1"),
            path("dbc2"),
            path("cfc")
        ),
    );
    let out = tmp.path().join("fit");
    let o = cfc(&["--config", &cfg, "fit"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("fit_report.toml").exists());
    assert_eq!(stdout(&o).lines().count(), 3);
}
