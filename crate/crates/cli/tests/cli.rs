use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.cfg"))
}

fn parafreq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parafreq")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copy of a bundled scenario with text substitutions.
fn edited(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = std::fs::read_to_string(scenario(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let p = dir.join(format!("{name}-edited.cfg"));
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn baseline_run_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = parafreq(&["run", scenario("torus-heat-baseline").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    let mut files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(
        files,
        ["frequency.csv", "measure.csv", "registry.json", "report.json", "report.md", "trace.csv", "trajectory.csv"]
    );
}

#[test]
fn zero_start_time_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), "torus-heat-baseline", &[("t0 = 0.01", "t0 = 0.0")]);
    let o = parafreq(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("flow.t0") && stderr(&o).contains("t0 > 0"), "{}", stderr(&o));
}

#[test]
fn weight_crossing_zero_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(
        dir.path(),
        "torus-heat-baseline",
        &[("kind = \"constant\"\nc = -1.0", "kind = \"polynomial\"\ncoeffs = [-0.03, 1.0]")],
    );
    let o = parafreq(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("weight"));
}

#[test]
fn unreadable_and_malformed_configs_exit_2() {
    assert_eq!(code(&parafreq(&["run", "/nonexistent/scenario.cfg"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), "torus-heat-baseline", &[("samples = 16", "samples = \"sixteen\"")]);
    let o = parafreq(&["fit", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("flow.samples"), "{}", stderr(&o));
    assert_eq!(code(&parafreq(&["run", scenario("torus-heat-baseline").to_str().unwrap(), "--tol-scale", "0"])), 2);
}

#[test]
fn unstable_step_is_a_runtime_error_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), "torus-heat-baseline", &[("samples = 16", "samples = 16\npde_dt = 0.001")]);
    let o = parafreq(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("pde stage"), "{}", stderr(&o));
}

#[test]
fn failing_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(
        dir.path(),
        "torus-log-p03",
        &[("nx = 64\nny = 64", "nx = 32\nny = 32"), ("c = -1.0\n", "c = -1.0\n\n[registry]\nzero_b4 = true\n")],
    );
    let o = parafreq(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("L35")), "{stdout}");
}

#[test]
fn fit_is_deterministic_and_audited() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = parafreq(&["fit", scenario("torus-log-p03").to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out.join("registry.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let reg: serde_json::Value = serde_json::from_slice(&a).unwrap();
    for name in ["B1", "B(n)"] {
        assert_eq!(reg["provenance"][name], "fitted");
        assert!(reg["audit"][name]["t"].as_f64().is_some());
    }
    assert_eq!(reg["safety"], 1.1);
}

#[test]
fn fit_on_constant_data_gives_zero_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = parafreq(&["fit", scenario("torus-heat-constant").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("registry.json")).unwrap()).unwrap();
    assert_eq!(reg["c1"], 0.0);
    assert_eq!(reg["c_n"], 0.0);
}

fn sweep_rows(dir: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn sweep_over_h_scale() {
    let dir = tempfile::tempdir().unwrap();
    let o = parafreq(&[
        "sweep",
        scenario("torus-heat-baseline").to_str().unwrap(),
        "--param",
        "h_scale",
        "--values",
        "1,2,4",
        "--threads",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(dir.path());
    assert_eq!(rows.len(), 3);
    let harnack: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(harnack.iter().all(|h| (h - harnack[0]).abs() <= 1e-12 * harnack[0].abs()));
    for v in ["h_scale=1", "h_scale=2", "h_scale=4"] {
        assert!(dir.path().join(v).join("frequency.csv").exists());
    }
}

#[test]
fn sweep_lambda_zero_matches_heat_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = parafreq(&[
        "sweep",
        scenario("torus-power-02-1").to_str().unwrap(),
        "--param",
        "lambda",
        "--values",
        "-1,0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    // lambda = -1 breaks the integral Harnack bound (lambda_1 = 0 drops a
    // negative reaction term); the sweep reports it.
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let rows = sweep_rows(dir.path());
    assert_eq!((&rows[0][1], &rows[1][1]), ("FAIL", "PASS"));
    assert!(rows[0][3].parse::<f64>().unwrap() < 0.0);
    let base = tempfile::tempdir().unwrap();
    let o = parafreq(&["run", scenario("torus-heat-baseline").to_str().unwrap(), "--out", base.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let heat = std::fs::read_to_string(base.path().join("frequency.csv")).unwrap();
    let zero = std::fs::read_to_string(dir.path().join("lambda=0").join("frequency.csv")).unwrap();
    for (a, b) in heat.lines().skip(1).zip(zero.lines().skip(1)) {
        let a: Vec<f64> = a.split(',').map(|x| x.parse().unwrap()).collect();
        let b: Vec<f64> = b.split(',').map(|x| x.parse().unwrap()).collect();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300), "{x} vs {y}");
        }
    }
    assert_ne!(rows[0][2], rows[1][2]);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let o = parafreq(&["sweep", scenario("torus-heat-baseline").to_str().unwrap(), "--param", "a", "--values", "0.1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sweep.a"));
}
