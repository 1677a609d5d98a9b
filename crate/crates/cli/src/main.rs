//! `sdive`: fit, simulate, diagnose and tune minimum S-divergence estimators.
//!
//! Exit status: 0 on success, 1 on usage or data errors, 2 when the numerics
//! fail (non-converged fit, quadrature breakdown, violated assumptions).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::{json, Map, Value};

use sdive::datasets::load_dataset;
use sdive::diagnostics::{
    attach_covariance, default_transparency_grid, influence_function_model, sandwich_cov, second_order_report,
    transparency_residual, SecondOrderForm,
};
use sdive::estimator::{fit, FitConfig, Method};
use sdive::simulation::{parse_bandwidth_rule, run_simulation, SimulationConfig};
use sdive::smoothing::KernelSpec;
use sdive::tuning::{select_tuning, Pilot, TuningSearchConfig};
use sdive::{NormalMeanModel, NormalModel, ParametricModel, QuadratureSpec, SdiveError, TuningPair};

const QUAD_ENV: &str = "SDIVE_QUAD_TOL";

#[derive(Parser)]
#[command(name = "sdive", version, about = "Minimum S-divergence estimation with kernel-smoothed densities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a sample and print the estimate as JSON.
    Fit(FitArgs),
    /// Run a Monte-Carlo study described by a config file.
    Simulate(SimulateArgs),
    /// Influence function and asymptotic covariance at a model point.
    Diagnose(DiagnoseArgs),
    /// Pick (alpha, lambda) by minimising an estimated mean squared error.
    Tune(TuneArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV path, or dataset:short / dataset:newcomb.
    #[arg(long)]
    data: String,
    #[arg(long, default_value = "normal")]
    model: String,
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    lambda: f64,
    /// msde-star, msde-beran or mdpde.
    #[arg(long, default_value = "msde-star")]
    method: String,
    /// auto, a bandwidth, or rel:<h0> (h = h0 times the robust scale).
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    #[arg(long)]
    quad_tol: Option<f64>,
    /// Accepted for interface symmetry; fitting draws no random numbers.
    #[arg(long)]
    seed: Option<u64>,
    /// Attach the asymptotic covariance of the estimate.
    #[arg(long)]
    cov: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving report.csv and meta.json.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long, default_value = "normal")]
    model: String,
    #[arg(long, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long)]
    sigma: f64,
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    bandwidth: f64,
    /// lo:hi:step
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Add T'' for the location with sigma held fixed.
    #[arg(long)]
    second_order: bool,
    /// derived (default) or printed.
    #[arg(long, default_value = "derived")]
    second_order_form: String,
    #[arg(long)]
    transparency: bool,
    /// Influence-function CSV path.
    #[arg(long, default_value = "influence.csv")]
    out: PathBuf,
    #[arg(long)]
    quad_tol: Option<f64>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    data: String,
    #[arg(long, allow_hyphen_values = true)]
    alpha_grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_grid: Option<String>,
    /// mdpde1, or mu:<m>,sigma:<s>.
    #[arg(long, default_value = "mdpde1", allow_hyphen_values = true)]
    pilot: String,
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// Use the sample covariance of the score terms for V*.
    #[arg(long)]
    empirical_variance: bool,
    /// Surface CSV path.
    #[arg(long, default_value = "tuning_surface.csv")]
    out: PathBuf,
    #[arg(long)]
    quad_tol: Option<f64>,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<SdiveError> for Failure {
    fn from(e: SdiveError) -> Self {
        match e {
            SdiveError::Quadrature { .. }
            | SdiveError::DegenerateFit(_)
            | SdiveError::AssumptionViolation(_)
            | SdiveError::TuningAbort(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<ExitCode, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Six significant digits, as a JSON number.
fn num(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    format!("{v:.5e}").parse::<f64>().map(Value::from).unwrap_or(Value::Null)
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect())).collect())
}

fn quad_spec(flag: Option<f64>) -> std::result::Result<QuadratureSpec, Failure> {
    let tol = match flag {
        Some(t) => Some(t),
        None => match std::env::var(QUAD_ENV) {
            Ok(s) => Some(s.trim().parse::<f64>().map_err(|_| usage(format!("{QUAD_ENV}: not a number: '{s}'")))?),
            Err(_) => None,
        },
    };
    match tol {
        Some(t) => Ok(QuadratureSpec::from_tolerance(t)?),
        None => Ok(QuadratureSpec::default()),
    }
}

fn check_model(name: &str) -> std::result::Result<(), Failure> {
    match name {
        "normal" => Ok(()),
        other => Err(usage(format!("unknown model '{other}' (only 'normal' is available)"))),
    }
}

fn parse_list(text: &str, what: &str) -> std::result::Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("{what}: not a number: '{}'", t.trim()))))
        .collect()
}

fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, Failure> {
    let parts = parse_list(&text.replace(':', ","), "grid")?;
    let [lo, hi, step] = parts[..] else {
        return Err(usage("grid must be lo:hi:step"));
    };
    if !(step > 0.0) || hi < lo {
        return Err(usage("grid needs lo <= hi and a positive step"));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(usage("grid has more than 100000 points"));
    }
    Ok((0..count).map(|i| lo + step * i as f64).collect())
}

fn parse_pilot(text: &str) -> std::result::Result<Pilot, Failure> {
    if text == "mdpde1" {
        return Ok(Pilot::MdpdeAlphaOne);
    }
    let mut mu = None;
    let mut sigma = None;
    for part in text.split(',') {
        let (k, v) = part.split_once(':').ok_or_else(|| usage(format!("bad pilot component '{part}'")))?;
        let v: f64 = v.trim().parse().map_err(|_| usage(format!("pilot {k}: not a number")))?;
        match k.trim() {
            "mu" => mu = Some(v),
            "sigma" => sigma = Some(v),
            other => return Err(usage(format!("unknown pilot parameter '{other}'"))),
        }
    }
    match (mu, sigma) {
        (Some(m), Some(s)) => Ok(Pilot::Explicit(vec![m, s])),
        _ => Err(usage("pilot needs mdpde1 or mu:<m>,sigma:<s>")),
    }
}

fn write_file(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("cannot write '{}': {e}", path.display())))
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    check_model(&a.model)?;
    let _ = a.seed;
    let method: Method = a.method.parse()?;
    let quad = quad_spec(a.quad_tol)?;
    let data = load_dataset(&a.data)?;
    let tuning = TuningPair::new(a.alpha, a.lambda)?;
    let mut cfg = FitConfig::new(method, tuning).with_quad(quad);
    if method != Method::Mdpde {
        cfg = cfg.with_bandwidth(parse_bandwidth_rule(&a.bandwidth)?);
    } else if a.bandwidth != "auto" {
        return Err(usage("mdpde does not smooth; drop --bandwidth"));
    }
    let mut result = fit(&data.values, &NormalModel, &cfg)?;
    if a.cov {
        let kernel = match (method, result.bandwidth_used) {
            (Method::MsdeStar, Some(h)) => Some(KernelSpec::gaussian(h)?),
            _ => None,
        };
        attach_covariance(&mut result, &NormalModel, kernel, a.alpha, data.values.len(), &quad)?;
    }
    let mut out = Map::new();
    out.insert("method".into(), json!(method.as_str()));
    out.insert("alpha".into(), json!(a.alpha));
    out.insert("lambda".into(), json!(a.lambda));
    // Full precision so that `--bandwidth <printed>` reproduces the fit.
    out.insert("bandwidth".into(), result.bandwidth_used.map_or(Value::Null, Value::from));
    out.insert("theta_hat".into(), json!({ "mu": num(result.theta_hat[0]), "sigma": num(result.theta_hat[1]) }));
    out.insert("objective".into(), num(result.objective));
    out.insert("estimating_eq_norm".into(), num(result.estimating_eq_norm));
    out.insert("converged".into(), json!(result.converged));
    out.insert("iterations".into(), json!(result.iterations));
    if let Some(c) = &result.asymptotic_cov {
        out.insert("asymptotic_cov".into(), matrix_json(c));
    }
    out.insert("dataset_n".into(), json!(data.values.len()));
    println!("{}", serde_json::to_string_pretty(&Value::Object(out)).expect("serializable"));
    Ok(if result.converged { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| usage(format!("cannot read config '{}': {e}", a.config.display())))?;
    let mut cfg = SimulationConfig::parse(&text)?;
    if let Some(w) = a.workers {
        cfg.worker_count = w;
    }
    if cfg.quad == QuadratureSpec::default() {
        cfg.quad = quad_spec(None)?;
    }
    cfg.validate()?;
    let report = run_simulation(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| usage(format!("cannot create '{}': {e}", a.out.display())))?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    let meta = serde_json::to_string_pretty(&report.meta_json()).expect("serializable");
    write_file(&a.out.join("meta.json"), &(meta + "\n"))?;
    let unreliable = report.cells.iter().filter(|c| c.unreliable).count();
    println!(
        "{} cells ({} tuning pairs x {} parameters) in {:.1} s; {} unreliable",
        report.cells.len(),
        cfg.cells().len(),
        report.cells.len() / cfg.cells().len().max(1),
        report.wall_time_s,
        unreliable
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_diagnose(a: DiagnoseArgs) -> CmdResult {
    check_model(&a.model)?;
    let quad = quad_spec(a.quad_tol)?;
    let theta = [a.mu, a.sigma];
    NormalModel.check(&theta)?;
    let kernel = KernelSpec::gaussian(a.bandwidth)?;
    let tuning = TuningPair::new(a.alpha, a.lambda)?;
    let grid = parse_grid(&a.grid)?;
    let mut report = influence_function_model(&NormalModel, &theta, kernel, &tuning, &grid, &quad)?;
    if a.second_order {
        let form = match a.second_order_form.as_str() {
            "derived" => SecondOrderForm::Derived,
            "printed" => SecondOrderForm::Printed,
            other => return Err(usage(format!("unknown second-order form '{other}'"))),
        };
        let location = NormalMeanModel::new(a.sigma)?;
        let so = second_order_report(&location, &[a.mu], kernel, &tuning, &grid, form, &quad)?;
        report.second_order = so.second_order;
    }
    write_file(&a.out, &report.to_csv())?;
    let cov = sandwich_cov(&NormalModel, &theta, kernel, a.alpha, &quad)?;
    let mut out = Map::new();
    out.insert("sandwich".into(), matrix_json(&cov.sandwich));
    out.insert("j_star".into(), matrix_json(&cov.j_star));
    out.insert("v_star".into(), matrix_json(&cov.v_star));
    out.insert("influence_csv".into(), json!(a.out.display().to_string()));
    if a.transparency {
        let t = transparency_residual(
            &NormalModel,
            &theta,
            kernel,
            a.alpha,
            &quad,
            &default_transparency_grid(&NormalModel, &theta),
        )?;
        out.insert("transparency".into(), json!({ "max_residual": num(t.max_residual), "transparent": t.transparent }));
    }
    println!("{}", serde_json::to_string_pretty(&Value::Object(out)).expect("serializable"));
    Ok(ExitCode::SUCCESS)
}

fn cmd_tune(a: TuneArgs) -> CmdResult {
    let quad = quad_spec(a.quad_tol)?;
    let data = load_dataset(&a.data)?;
    let mut cfg = TuningSearchConfig { pilot: parse_pilot(&a.pilot)?, quad, ..TuningSearchConfig::default() };
    if let Some(g) = &a.alpha_grid {
        cfg.alpha_grid = parse_list(g, "alpha grid")?;
    }
    if let Some(g) = &a.lambda_grid {
        cfg.lambda_grid = parse_list(g, "lambda grid")?;
    }
    cfg.bandwidth = parse_bandwidth_rule(&a.bandwidth)?;
    if a.empirical_variance {
        cfg.variance = sdive::tuning::VarianceForm::Empirical;
    }
    let sel = select_tuning(&data.values, &NormalModel, &cfg)?;
    write_file(&a.out, &sel.surface_csv())?;
    let out = json!({
        "best_alpha": sel.best.alpha(),
        "best_lambda": sel.best.lambda(),
        "best_theta": { "mu": num(sel.best_theta[0]), "sigma": num(sel.best_theta[1]) },
        "pilot": { "mu": num(sel.pilot[0]), "sigma": num(sel.pilot[1]) },
        "bandwidth": sel.bandwidth,
        "surface_path": a.out.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializable"));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Tune(a) => cmd_tune(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_errors_map_to_exit_two() {
        assert!(matches!(Failure::from(SdiveError::DegenerateFit("x".into())), Failure::Numeric(_)));
        assert!(matches!(Failure::from(SdiveError::TuningAbort("x".into())), Failure::Numeric(_)));
        assert!(matches!(Failure::from(SdiveError::Parse { line: 1, message: "x".into() }), Failure::Usage(_)));
    }

    #[test]
    fn grids_and_pilots() {
        assert_eq!(parse_grid("-1:1:0.5").ok().unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(parse_grid("1:0:0.5").is_err() && parse_grid("0:1").is_err());
        assert!(matches!(parse_pilot("mu:1,sigma:2").ok().unwrap(), Pilot::Explicit(t) if t == vec![1.0, 2.0]));
        assert!(parse_pilot("sigma:2").is_err());
        assert_eq!(num(0.123456789), Value::from(0.123457));
    }
}
