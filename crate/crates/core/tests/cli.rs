use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algdelay")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn path(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn verify_echo_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    let o = run(&["verify", "--scenario", "echo", "--out", &a]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(code(&run(&["verify", "--scenario", "echo", "--out", &b])), 0);
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let report = read_json(Path::new(&a));
    assert_eq!(report["pass"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 9);
    assert_eq!(report["provenance"]["seed"], 42);
}

#[test]
fn seed_changes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    run(&["verify", "--scenario", "echo", "--out", &a]);
    run(&["verify", "--scenario", "echo", "--seed", "7", "--out", &b]);
    assert_eq!(read_json(Path::new(&b))["provenance"]["seed"], 7);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn verify_lin2_reports_graph_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "r.json");
    assert_eq!(code(&run(&["verify", "--scenario", "lin2", "--out", &out])), 0);
    let report = read_json(Path::new(&out));
    let names: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"graph_residual"));
}

#[test]
fn broken_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = path(&dir, "broken.json");
    std::fs::write(
        &file,
        r#"{"name": "broken", "h": 1.0, "n": 1, "k": 1, "g": {"expr": ["-v1"]},
            "Q": {"variant": "coord_select", "nu": [1], "kappa": [1]},
            "delta": {"variant": "offset", "d": ["0.5"], "W": {"boxes": [{"lo": [1], "hi": [1]}]}}}"#,
    )
    .unwrap();
    let o = run(&["verify", "--scenario", &file]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("W"));
    std::fs::write(&file, "{\"name\": \"x\",\n \"h\": }").unwrap();
    let o = run(&["verify", "--scenario", &file]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["verify", "--scenario", "no-such-scenario"])), 2);
}

#[test]
fn simulate_equilibrium_has_constant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(&dir, "eq.csv");
    let o = run(&["simulate", "--scenario", "echo", "--amplitude", "0", "--t-end", "1", "--out", &csv]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x_1,dx_1,r_1,res_delta,res_ode");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 1001);
    for row in &rows {
        assert!(row[1].abs() <= 1e-14 && row[2].abs() <= 1e-14);
        assert!((row[3] + 1.0).abs() <= 1e-14);
    }
}

#[test]
fn simulate_perturbed_echo_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = path(&dir, "run.csv");
    assert_eq!(code(&run(&["simulate", "--scenario", "echo", "--out", &csv])), 0);
    let side = read_json(&dir.path().join("run.json"));
    assert!(side["max_delta_residual"].as_f64().unwrap() <= 1e-6);
    assert!(side["max_ode_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(side["t_e"], 10.0);
    assert_eq!(side["provenance"]["settings"]["mesh"], 2048);
    assert_eq!(side["provenance"]["settings"]["seed"], 42);
}

#[test]
fn simulate_refuses_large_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "echo", "--dt", "0.1", "--out", &path(&dir, "x.csv")]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("δ_min/4"));
}

#[test]
fn find_point_then_transform() {
    let dir = tempfile::tempdir().unwrap();
    let point = path(&dir, "p.json");
    assert_eq!(code(&run(&["find-point", "--scenario", "pair", "--out", &point])), 0);
    let found = read_json(Path::new(&point));
    assert!(found["residuals"]["ode"].as_f64().unwrap() <= 1e-10);
    assert!(found["residuals"]["delta"].as_f64().unwrap() <= 1e-10);

    let image = path(&dir, "t.json");
    let o = run(&["transform", "--scenario", "pair", "--point", &point, "--roundtrip", "--out", &image]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = read_json(Path::new(&image));
    assert!(t["residuals"]["output"]["slope_at_zero"].as_f64().unwrap() <= 1e-10);
    assert!(t["residuals"]["roundtrip_c1_error"].as_f64().unwrap() <= 1e-8);

    let back = path(&dir, "y.json");
    let o = run(&["transform", "--scenario", "pair", "--point", &image, "--direction", "inverse", "--out", &back]);
    assert_eq!(code(&o), 0);
    let y = read_json(Path::new(&back));
    assert_eq!(y["residuals"]["output"]["on_manifold"], true);
}

#[test]
fn inverse_outside_o_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let point = path(&dir, "p.json");
    run(&["find-point", "--scenario", "echo", "--out", &point]);
    let mut p = read_json(Path::new(&point));
    p["point"]["r"] = serde_json::json!([0.9]);
    std::fs::write(&point, p.to_string()).unwrap();
    let o = run(&["transform", "--scenario", "echo", "--point", &point, "--direction", "inverse"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not in O"));
}
