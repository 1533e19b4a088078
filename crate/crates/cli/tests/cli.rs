//! End-to-end CLI runs against the bundled configs: exit codes, outputs,
//! determinism, and the manifest round trip.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dualmech")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dualmech_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(bin())
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(extra)
        .output()
        .expect("spawn dualmech")
}

fn manifest(out: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join("manifest.json")).expect("manifest.json");
    serde_json::from_str(&text).expect("manifest parses")
}

#[test]
fn integrate_lorenz_succeeds() {
    let out = fresh_dir("integrate");
    let res = run(
        "integrate",
        &configs().join("lorenz_integrate.json"),
        &out,
        &[],
    );
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3\n"));
    let m = manifest(&out);
    assert_eq!(m["subcommand"], "integrate");
    assert!(m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|v| v == "trajectory.csv"));
}

#[test]
fn malformed_config_exits_2_with_no_outputs() {
    let out = fresh_dir("malformed");
    let bad = std::env::temp_dir().join("dualmech_cli_bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let res = run("integrate", &bad, &out, &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists(), "no partial outputs on config errors");

    // schema violations too (unknown field)
    std::fs::write(
        &bad,
        r#"{"system": {"system": "lorenz", "initial": {"x0": [1,1,1]}}, "run": {"bogus": 1}}"#,
    )
    .unwrap();
    let res = run("integrate", &bad, &out, &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn integrate_is_byte_deterministic_and_round_trips() {
    let out1 = fresh_dir("det1");
    let out2 = fresh_dir("det2");
    let cfg = configs().join("lorenz_integrate.json");
    assert_eq!(run("integrate", &cfg, &out1, &[]).status.code(), Some(0));
    assert_eq!(run("integrate", &cfg, &out2, &[]).status.code(), Some(0));
    let a = std::fs::read(out1.join("trajectory.csv")).unwrap();
    let b = std::fs::read(out2.join("trajectory.csv")).unwrap();
    assert_eq!(a, b, "identical config must produce identical CSV bytes");

    // manifest round trip: the config echo reproduces the run
    let m = manifest(&out1);
    let echo = serde_json::to_string(&m["config"]).unwrap();
    let echo_path = std::env::temp_dir().join("dualmech_cli_echo.json");
    std::fs::write(&echo_path, echo).unwrap();
    let out3 = fresh_dir("det3");
    assert_eq!(
        run("integrate", &echo_path, &out3, &[]).status.code(),
        Some(0)
    );
    let c = std::fs::read(out3.join("trajectory.csv")).unwrap();
    assert_eq!(a, c, "config echo must reproduce the run");
}

#[test]
fn dual_solve_converges_and_reports() {
    let out = fresh_dir("dual_solve");
    // shortened variant of the bundled config for test speed
    let cfg = std::env::temp_dir().join("dualmech_cli_ds.json");
    std::fs::write(
        &cfg,
        r#"{
          "system": {"system": "lorenz", "initial": {"x0": [1.0, 1.0, 1.0]}},
          "run": {"t_end": 0.4, "h": 0.002, "c": 100.0,
                  "base": {"kind": "perturbed_oracle", "amplitude": 0.001}}
        }"#,
    )
    .unwrap();
    let res = run("dual-solve", &cfg, &out, &["--emit-plot-data"]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let m = manifest(&out);
    assert_eq!(m["solve"]["converged"], true);
    assert!(out.join("duals.csv").exists());
    assert!(out.join("primal.csv").exists());
    assert!(out.join("plot_el_residual.csv").exists());
}

#[test]
fn dual_solve_with_small_c_exits_4_with_invertibility_report() {
    let out = fresh_dir("singular");
    let cfg = std::env::temp_dir().join("dualmech_cli_sing.json");
    // constant duals with gamma^2 + mu^2 past c^2 break the DtP solve at
    // the very first residual evaluation
    std::fs::write(
        &cfg,
        r#"{
          "system": {"system": "lorenz", "initial": {"x0": [1.0, 1.0, 1.0]}},
          "run": {"t_end": 0.2, "h": 0.002, "c": 1.0,
                  "base": {"kind": "oracle"},
                  "solve": {"initial_guess": {"constant": [0.0, 2.0, 2.0]}}}
        }"#,
    )
    .unwrap();
    let res = run("dual-solve", &cfg, &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let m = manifest(&out);
    assert!(m["error"]["message"]
        .as_str()
        .unwrap()
        .contains("increase the H coefficients"));
    let inv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("invertibility.json")).unwrap())
            .unwrap();
    assert_eq!(inv["flagged"], true);
    assert!(inv["recommended_c_scale"].as_f64().unwrap() >= 2.0);
}

#[test]
fn reduce_pars_reports_splits() {
    let out = fresh_dir("reduce");
    let res = run("reduce", &configs().join("pars_reduce.json"), &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let m = manifest(&out);
    assert!(m["max_constraint_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(m["split_events"].as_array().unwrap().len(), 1);
    assert_eq!(m["split_events"][0]["eliminated"][0], 1); // v2 eliminated
    let forces = std::fs::read_to_string(out.join("forces.csv")).unwrap();
    assert!(forces.starts_with("t,Fc1,Fc2,Fc3\n"));
}

#[test]
fn hamiltonian_scan_reports_drift() {
    let out = fresh_dir("hamiltonian");
    let cfg = std::env::temp_dir().join("dualmech_cli_ham.json");
    std::fs::write(
        &cfg,
        r#"{
          "system": {"system": "lorenz",
                     "params": {"a": 10.0, "r": 0.5, "b": 2.6666666666666665},
                     "initial": {"x0": [0.2, 0.15, 0.25]}},
          "run": {"t_end": 1.0, "h": 0.005, "c": 10.0, "base": {"kind": "zero"},
                  "solve": {"initial_guess": "adjoint"}}
        }"#,
    )
    .unwrap();
    let res = run("hamiltonian", &cfg, &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let m = manifest(&out);
    assert_eq!(m["conservation"]["valid"], true);
    assert!(m["conservation"]["drift"].as_f64().unwrap() < 1e-2);
    assert!(out.join("hamiltonian.csv").exists());
}

#[test]
fn gen_pars_m2_reduce_and_integrate() {
    let cfg = configs().join("gen_pars_m2_reduce.json");
    let out = fresh_dir("gp2_reduce");
    let res = run("reduce", &cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert!(m["max_constraint_residual"].as_f64().unwrap() <= 1e-9);

    let out2 = fresh_dir("gp2_integrate");
    let res2 = run("integrate", &cfg, &out2, &[]);
    assert_eq!(res2.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&res2.stderr));
    let m2 = manifest(&out2);
    assert!(m2["invariants"]["max_constraint_residual"].as_f64().unwrap() <= 1e-9);
    let csv = std::fs::read_to_string(out2.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,v1,v2,Q1,Q2,s\n"));
}

#[test]
fn hamiltonian_refuses_time_dependent_base() {
    let out = fresh_dir("ham_refuse");
    let cfg = std::env::temp_dir().join("dualmech_cli_ham_bad.json");
    std::fs::write(
        &cfg,
        r#"{
          "system": {"system": "lorenz",
                     "params": {"a": 10.0, "r": 0.5, "b": 2.6666666666666665},
                     "initial": {"x0": [0.2, 0.15, 0.25]}},
          "run": {"t_end": 0.5, "h": 0.005, "c": 10.0, "base": {"kind": "oracle"}}
        }"#,
    )
    .unwrap();
    let res = run("hamiltonian", &cfg, &out, &[]);
    assert_eq!(res.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert!(m["error"]["message"]
        .as_str()
        .unwrap()
        .contains("time-independent"));
}

#[test]
fn compare_laws_quantifies_divergence() {
    let out = fresh_dir("compare");
    let res = run(
        "compare",
        &configs().join("pars_compare_laws.json"),
        &out,
        &[],
    );
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let m = manifest(&out);
    assert!(m["max_divergence"].as_f64().unwrap() > 1e-3);
    assert!(out.join("trajectory_a.csv").exists());
    assert!(out.join("trajectory_b.csv").exists());

    // threaded fan-out produces the same results
    let out2 = fresh_dir("compare_mt");
    let res2 = Command::new(bin())
        .arg("compare")
        .arg("--config")
        .arg(configs().join("pars_compare_laws.json"))
        .arg("--out")
        .arg(&out2)
        .arg("--quiet")
        .env("DUALMECH_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(res2.status.code(), Some(0));
    let a = std::fs::read(out.join("trajectory_a.csv")).unwrap();
    let b = std::fs::read(out2.join("trajectory_a.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dtp_check_reports_stationarity() {
    let out = fresh_dir("dtp_check");
    let res = run("dtp-check", &configs().join("lorenz_dual_solve.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["invertibility"]["flagged"], false);
    // at zero duals the smallest singular value is c
    let sigma = m["invertibility"]["min_sigma"].as_f64().unwrap();
    assert!((sigma - 100.0).abs() < 1.0, "sigma {sigma}");
    let csv = std::fs::read_to_string(out.join("stationarity.csv")).unwrap();
    assert!(csv.starts_with("node,t,stationarity_residual_inf,sigma_min\n"));
}

#[test]
fn gen_pars_dual_solve_runs() {
    let out = fresh_dir("gen_pars");
    let res = run("dual-solve", &configs().join("gen_pars_dual_solve.json"), &out, &[]);
    assert_eq!(res.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m["solve"]["converged"], true);
    let csv = std::fs::read_to_string(out.join("primal.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3,v1,v2,v3,Q1,Q2,Q3,s\n"));
}

#[test]
fn periodic_harmonic_from_recurrence() {
    let out = fresh_dir("periodic");
    let res = run(
        "periodic",
        &configs().join("harmonic_periodic.json"),
        &out,
        &[],
    );
    assert_eq!(
        res.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let m = manifest(&out);
    assert_eq!(m["converged"], true);
    assert_eq!(m["collapsed"], false);
    let period = m["period"].as_f64().unwrap();
    assert!(
        (period - 2.0 * std::f64::consts::PI).abs() < 5e-3,
        "period {period}"
    );
    assert!(out.join("orbit.csv").exists());
}
