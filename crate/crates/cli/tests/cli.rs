use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ymflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ymflow"))
        .args(args)
        .current_dir(dir)
        .env("YMFLOW_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn dimension_must_exceed_ten() {
    let dir = tempfile::tempdir().unwrap();
    let o = ymflow(dir.path(), &["ground-state", "--d", "9", "--out", "q.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("d must exceed 10"), "{}", stderr(&o));
    assert!(!dir.path().join("q.csv").exists());
}

#[test]
fn ground_state_outputs_carry_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = ymflow(dir.path(), &["ground-state", "--d", "11", "--tier", "coarse", "--out", "q.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("q.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let hash = lines[0].strip_prefix("# config_hash: ").unwrap();
    assert_eq!(hash.len(), 64);
    assert_eq!(lines[1], format!("# code_version: {}", env!("CARGO_PKG_VERSION")));
    assert!(lines[2].starts_with("# grid: n=1500"));
    assert_eq!(lines[3], "y,Q,LambdaQ,V,Z");
    assert_eq!(lines.len(), 4 + 1500);
    // 17 significant digits
    let first = lines[4].split(',').next().unwrap();
    let mantissa = first.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{first}");
    let side = json(&dir.path().join("q.json"));
    assert_eq!(side["header"]["config_hash"], hash);
    assert!((side["gamma"].as_f64().unwrap() - 1.6972243622680053).abs() < 1e-15);
    assert!(side["relative_ode_residual"].as_f64().unwrap() < 1e-6);
    assert_eq!(side["config"]["d"], 11);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "d = 12\ntier = \"coarse\"\n").unwrap();
    let o = ymflow(dir.path(), &["--config", "run.toml", "modulate", "--out", "a.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("a.json"))["config"]["d"], 12);
    let o = ymflow(dir.path(), &["--config", "run.toml", "modulate", "--d", "13", "--out", "b.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = json(&dir.path().join("b.json"));
    assert_eq!(b["config"]["d"], 13);
    assert_eq!(b["config"]["tier"], "coarse");
}

#[test]
fn bad_config_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("typo.toml"), "dimension = 11\n").unwrap();
    let o = ymflow(dir.path(), &["--config", "typo.toml", "modulate", "--out", "a.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
    std::fs::write(dir.path().join("other.toml"), "command = \"evolve\"\n").unwrap();
    let o = ymflow(dir.path(), &["--config", "other.toml", "modulate", "--out", "a.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("evolve"), "{}", stderr(&o));
    let o = ymflow(dir.path(), &["modulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
}

#[test]
fn numerical_failure_exit_code() {
    // a domain this short leaves no decade for the tail fit of Q
    let dir = tempfile::tempdir().unwrap();
    let o = ymflow(dir.path(), &["ground-state", "--y-max", "30", "--n", "500", "--out", "q.csv"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("tail"), "{}", stderr(&o));
}

#[test]
fn modulation_table_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    let o = ymflow(dir.path(), &["modulate", "--d", "11", "--l", "2", "--s0", "10", "--s1", "1e6", "--out", "traj.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(csv.lines().nth(3).unwrap(), "s,t,lambda,b1,b2,b3,b4,U1,U2,V1,V2");
    assert_eq!(csv.lines().count(), 4 + 600);
    let side = json(&dir.path().join("traj.json"));
    let e = side["rate_fit"]["exponent"].as_f64().unwrap();
    assert!((e - 1.17838).abs() / 1.17838 < 0.02, "{e}");
}

#[test]
fn verify_is_deterministic_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "constants", "coercivity", "--tier", "coarse", "--seed", "7", "--out"];
    let a = ymflow(dir.path(), &[&args[..], &["a.json"]].concat());
    let b = ymflow(dir.path(), &[&args[..], &["b.json"]].concat());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    let (ra, rb) = (std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(ra, rb);
    let r = json(&dir.path().join("a.json"));
    assert_eq!(r["criteria"].as_array().unwrap().len(), 2);
    assert_eq!(r["passed"], true);

    // a mesh that does not reach the origin region cannot resolve Gamma there
    let o = ymflow(dir.path(), &["verify", "operators", "--y-min", "0.1", "--n", "1500", "--out", "bad.json"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("criterion  3 FAIL"), "{}", stderr(&o));
    let r = json(&dir.path().join("bad.json"));
    assert_eq!(r["passed"], false);
    let c = &r["criteria"][0];
    assert_eq!(c["id"], 3);
    let failed: Vec<&str> = c["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|x| x["passed"] == false)
        .map(|x| x["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["Gamma slope at origin"]);
}

#[test]
fn evolve_reruns_from_emitted_config() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["evolve", "--tier", "coarse", "--max-steps", "60", "--snap-every", "30", "--out", "run"];
    let o = ymflow(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in ["trajectory.csv", "diagnostics.json", "config.toml", "snapshots/snap_00000.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let snap = std::fs::read_to_string(run.join("snapshots/snap_00000.csv")).unwrap();
    assert_eq!(snap.lines().nth(3).unwrap(), "y,w,q");
    let diag = json(&run.join("diagnostics.json"));
    assert!(diag["max_constraint"].as_f64().unwrap() <= 1e-8);
    let o = ymflow(dir.path(), &["--config", "run/config.toml", "evolve", "--out", "again"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["trajectory.csv", "diagnostics.json", "snapshots/snap_00001.csv"] {
        let a = std::fs::read(run.join(f)).unwrap();
        let b = std::fs::read(dir.path().join("again").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    // nothing outside the two output directories
    let mut top: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, ["again", "run"]);
}

#[test]
fn physical_frame_energy_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let o = ymflow(dir.path(), &["evolve", "--frame", "physical", "--tier", "coarse", "--t-end", "2", "--snapshots", "2", "--out", "p"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let diag = json(&dir.path().join("p/diagnostics.json"));
    assert_eq!(diag["t_reached"], 2.0);
    assert!(diag["energy_released"].as_f64().unwrap() > 0.0);
    assert!(diag["max_relative_energy_increase"].as_f64().unwrap() <= 0.0);
    assert!(dir.path().join("p/snapshots/snap_00001.csv").exists());
}

#[test]
fn operators_and_profile_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = ymflow(dir.path(), &["operators", "--tier", "coarse", "--L", "3", "--report", "ops.json", "--dump"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&dir.path().join("ops.json"));
    assert_eq!(r["slope_table"].as_array().unwrap().len(), 4);
    assert!(r["phi"]["max_orthogonality_defect"].as_f64().unwrap() < 1e-6);
    assert!(dir.path().join("ops.T_3.csv").exists());
    let o = ymflow(dir.path(), &["profile", "--tier", "coarse", "--b1", "1e-3", "--out", "p.csv", "--norms", "norms.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let n = json(&dir.path().join("norms.json"));
    assert_eq!(n["b"][0], 1e-3);
    assert!(!n["norms"].as_array().unwrap().is_empty());
    let o = ymflow(dir.path(), &["profile", "--tier", "coarse", "--b1", "0.5", "--out", "p.csv"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
