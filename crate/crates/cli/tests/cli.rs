use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scene() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/env1_scene.json").canonicalize().unwrap()
}

fn write_config(dir: &Path, duration_s: f64, period_ms: f64) -> PathBuf {
    let cfg = format!(
        r#"{{
  "scene": {scene:?},
  "motion": {{
    "lane": [[30.0, -20.0], [30.0, 60.0]],
    "speed_limit": 20.0,
    "initial_speed": 15.0,
    "accel": {{ "type": "constant", "accel": 0.0 }},
    "duration_s": {duration_s},
    "dt_s": 0.001
  }},
  "extract": {{ "zero_pad": 2 }},
  "srs_periods_ms": [{period_ms}],
  "eval_runs": 1,
  "seed": 5
}}"#,
        scene = scene()
    );
    let path = dir.join(format!("cfg_{period_ms}.json"));
    std::fs::write(&path, cfg).unwrap();
    path
}

fn pem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pem")).args(args).output().unwrap()
}

fn archive_count(path: &Path) -> usize {
    let r = pem_core::chan::io::ArchiveReader::new(std::fs::File::open(path).unwrap()).unwrap();
    r.map(|m| m.unwrap()).count()
}

#[test]
fn simulate_archives_one_measurement_per_occasion() {
    let tmp = tempfile::tempdir().unwrap();
    for (period, expected) in [(10.0, 11), (50.0, 3)] {
        let cfg = write_config(tmp.path(), 0.1, period);
        let out = tmp.path().join(format!("out{period}"));
        let o = pem(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(archive_count(&out.join("measurements.pemm")), expected);
        assert!(out.join("truth_paths.csv").is_file() && out.join("trajectory.csv").is_file());
    }
}

#[test]
fn same_seed_gives_identical_archive_and_seed_flag_changes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 0.05, 10.0);
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(pem(&args).status.success());
        std::fs::read(out.join("measurements.pemm")).unwrap()
    };
    let a = run("a", &[]);
    assert_eq!(a, run("b", &[]));
    assert_ne!(a, run("c", &["--seed", "6"]));
}

#[test]
fn extract_reads_the_simulated_archive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 0.05, 10.0);
    let out = tmp.path().join("out");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    assert!(pem(&["simulate", "--config", c, "--out", o]).status.success());
    let x = pem(&["extract", "--config", c, "--out", o]);
    assert!(x.status.success(), "{}", String::from_utf8_lossy(&x.stderr));
    let text = std::fs::read_to_string(out.join("features.csv")).unwrap();
    let rows = text.lines().count() - 1;
    // Six occasions, LoS plus one reflection each.
    assert_eq!(rows, 12, "{text}");
}

#[test]
fn invalid_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 0.05, 10.0);
    let text = std::fs::read_to_string(&cfg).unwrap().replace("[10]", "[10, 25]");
    std::fs::write(&cfg, text).unwrap();
    let o = pem(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("multiple"));

    let o = pem(&["track", "--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn experiment_without_kind_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 0.05, 10.0);
    let o = pem(&["experiment", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--kind"));
}
