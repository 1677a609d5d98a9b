use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sdive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdive")).args(args).env_remove("SDIVE_QUAD_TOL").output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn close(v: &Value, want: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() <= tol
}

#[test]
fn fit_short_mle() {
    let out = sdive(&["fit", "--data", "dataset:short", "--model", "normal", "--alpha", "0", "--lambda", "0", "--method", "mdpde"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(close(&v["theta_hat"]["mu"], 8.378, 1e-3) && close(&v["theta_hat"]["sigma"], 0.846, 1e-3));
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["method", "alpha", "lambda", "bandwidth", "theta_hat", "objective", "estimating_eq_norm", "converged", "iterations", "dataset_n"]
    );
}

#[test]
fn fit_short_robust_with_covariance() {
    let out = sdive(&["fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "-0.5", "--method", "msde-star", "--bandwidth", "auto", "--cov"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(close(&v["theta_hat"]["mu"], 8.40, 0.02) && close(&v["theta_hat"]["sigma"], 0.35, 0.02));
    assert_eq!(v["asymptotic_cov"].as_array().unwrap().len(), 2);
    assert_eq!(v["dataset_n"], 17);
}

#[test]
fn fit_newcomb_mle() {
    let v = json(&sdive(&["fit", "--data", "dataset:newcomb", "--alpha", "0", "--lambda", "0", "--method", "mdpde"]));
    assert!(close(&v["theta_hat"]["mu"], 26.21, 0.01) && close(&v["theta_hat"]["sigma"], 10.66, 0.01));
}

#[test]
fn printed_bandwidth_reproduces_the_fit() {
    let a = json(&sdive(&["fit", "--data", "dataset:newcomb", "--alpha", "0.3", "--lambda", "-0.5"]));
    let h = a["bandwidth"].as_f64().unwrap().to_string();
    let b = json(&sdive(&["fit", "--data", "dataset:newcomb", "--alpha", "0.3", "--lambda", "-0.5", "--bandwidth", &h]));
    assert_eq!(a["theta_hat"], b["theta_hat"]);
    assert_eq!(a["objective"], b["objective"]);
}

#[test]
fn csv_input_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("x.csv");
    std::fs::write(&good, "# measurements\n1.2\n0.7\n1.9\n1.1\n0.4\n1.5\n0.9\n1.3\n").unwrap();
    let out = sdive(&["fit", "--data", good.to_str().unwrap(), "--alpha", "0.25"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1.0\n2.0\nthree\n").unwrap();
    let out = sdive(&["fit", "--data", bad.to_str().unwrap(), "--alpha", "0.25"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    assert_eq!(sdive(&["fit", "--data", "/no/such/file", "--alpha", "0"]).status.code(), Some(1));
    assert_eq!(sdive(&["fit", "--data", "dataset:short", "--alpha", "0", "--lambda", "1", "--method", "mdpde"]).status.code(), Some(1));
    assert_eq!(sdive(&["fit", "--data", "dataset:short"]).status.code(), Some(1));
    assert_eq!(sdive(&["fit", "--data", "dataset:short", "--alpha", "0", "--model", "gamma"]).status.code(), Some(1));
}

#[test]
fn quad_tol_environment_is_honoured() {
    let out = Command::new(env!("CARGO_BIN_EXE_sdive"))
        .args(["fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "0"])
        .env("SDIVE_QUAD_TOL", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_sdive"))
        .args(["fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "0"])
        .env("SDIVE_QUAD_TOL", "1e-7")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

fn diagnose(dir: &Path, extra: &[&str]) -> (Value, String) {
    let csv = dir.join("if.csv");
    let mut args = vec!["diagnose", "--model", "normal", "--mu", "0", "--sigma", "1", "--grid", "-3:3:0.5", "--out", csv.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = sdive(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    (json(&out), std::fs::read_to_string(csv).unwrap())
}

#[test]
fn diagnose_alpha_zero_sandwich_ignores_bandwidth() {
    let dir = tempfile::tempdir().unwrap();
    for h in ["0.1", "0.5", "1"] {
        let (v, csv) = diagnose(dir.path(), &["--alpha", "0", "--bandwidth", h, "--transparency"]);
        assert!(close(&v["sandwich"][0][0], 1.0, 1e-5));
        assert!(v["transparency"]["max_residual"].as_f64().unwrap() <= 1e-6);
        assert!(csv.starts_with("y,if_mu,if_sigma\n"));
        assert_eq!(csv.lines().count(), 14);
    }
}

#[test]
fn diagnose_second_order_is_lambda_free_at_alpha_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, a) = diagnose(dir.path(), &["--alpha", "1", "--lambda", "-1", "--bandwidth", "0.5", "--second-order"]);
    let (_, b) = diagnose(dir.path(), &["--alpha", "1", "--lambda", "2", "--bandwidth", "0.5", "--second-order"]);
    assert!(a.starts_with("y,if_mu,if_sigma,t2\n"));
    assert_eq!(a, b);
}

#[test]
fn diagnose_printed_form_leaves_pole_rows_empty() {
    let dir = tempfile::tempdir().unwrap();
    let (_, csv) = diagnose(
        dir.path(),
        &["--alpha", "0.5", "--lambda", "-0.5", "--bandwidth", "0.5", "--second-order", "--second-order-form", "printed"],
    );
    let centre = csv.lines().find(|l| l.starts_with("0,")).unwrap();
    assert!(centre.ends_with(','), "{centre}");
}

#[test]
fn tune_newcomb_picks_robust_region() {
    let dir = tempfile::tempdir().unwrap();
    let surface = dir.path().join("surface.csv");
    let out = sdive(&["tune", "--data", "dataset:newcomb", "--out", surface.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["best_theta"]["sigma"].as_f64().unwrap() < 6.0);
    assert_eq!(v["surface_path"], surface.to_str().unwrap());
    assert_eq!(std::fs::read_to_string(&surface).unwrap().lines().count(), 1 + 8 * 6);
}

#[test]
fn tune_single_cell_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let surface = dir.path().join("s.csv");
    let s = surface.to_str().unwrap();
    let v = json(&sdive(&["tune", "--data", "dataset:short", "--alpha-grid", "0.25", "--lambda-grid", "-0.3", "--pilot", "mu:8.4,sigma:0.4", "--out", s]));
    assert_eq!((v["best_alpha"].as_f64(), v["best_lambda"].as_f64()), (Some(0.25), Some(-0.3)));
    assert_eq!(sdive(&["tune", "--data", "/missing.csv", "--out", s]).status.code(), Some(1));
    assert_eq!(sdive(&["tune", "--data", "dataset:short", "--pilot", "mu:1", "--out", s]).status.code(), Some(1));
}

const SMALL: &str = "[target]\ndist = normal(0, 3)\n[contaminant]\ndist = normal(15, 3)\nepsilon = 0.1\n\
[grid]\nalpha = 0, 0.5\nlambda = -0.5, 0\n[run]\nn = 30\nreplications = 12\nseed = 3\nworkers = 2\n";

#[test]
fn simulate_writes_report_and_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    let run = |workers: &str, sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = sdive(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--workers", workers]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("8 cells"));
        let meta: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["replications"], 12);
        std::fs::read_to_string(out_dir.join("report.csv")).unwrap()
    };
    let a = run("1", "one");
    let b = run("3", "three");
    assert_eq!(a, b);
    assert!(a.starts_with("alpha,lambda,parameter,bias,mse,mc_stderr,failures,unreliable\n"));
    assert_eq!(a.lines().count(), 9);
}

#[test]
fn simulate_reports_config_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, SMALL.replace("n = 30", "n = thirty")).unwrap();
    let out = sdive(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 10"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let t2 = sdive::simulation::SimulationConfig::parse(&std::fs::read_to_string(root.join("table2.cfg")).unwrap()).unwrap();
    assert_eq!((t2.lambda_grid.len(), t2.alpha_grid.len()), (9, 7));
    let ci = sdive::simulation::SimulationConfig::parse(&std::fs::read_to_string(root.join("case_i.cfg")).unwrap()).unwrap();
    assert_eq!(ci.epsilon, 0.1);
}
