//! Monte-Carlo contamination studies and the bandwidth-stability experiment.
//!
//! Every replication draws its sample from a seed derived from
//! `(config.seed, r)` and aggregates are summed pairwise in replication order,
//! so reports are identical for any worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::fmt_num;
use crate::divergence::TuningPair;
use crate::error::{Result, SdiveError};
use crate::estimator::{fit, BandwidthRule, FitConfig, Method};
use crate::models::{sample_contaminated, DistSpec, NormalModel, ParametricModel, ScaleReading};
use crate::quadrature::QuadratureSpec;

/// Share of failed fits above which a cell is flagged unreliable.
pub const UNRELIABLE_FAILURE_SHARE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub target: DistSpec,
    pub contaminant: Option<DistSpec>,
    pub epsilon: f64,
    pub n: usize,
    pub replications: usize,
    pub alpha_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub method: Method,
    pub bandwidth_rule: BandwidthRule,
    pub seed: u64,
    pub worker_count: usize,
    pub quad: QuadratureSpec,
}

impl SimulationConfig {
    /// Pure `N(0, 3)` data, `n = 50`, MSDE\* with the normal-reference bandwidth.
    pub fn new(alpha_grid: Vec<f64>, lambda_grid: Vec<f64>) -> Self {
        Self {
            target: DistSpec::Normal { mu: 0.0, sigma: 3.0 },
            contaminant: None,
            epsilon: 0.0,
            n: 50,
            replications: 1000,
            alpha_grid,
            lambda_grid,
            method: Method::MsdeStar,
            bandwidth_rule: BandwidthRule::NormalReference,
            seed: 1,
            worker_count: 1,
            quad: QuadratureSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if self.target.normal_params().is_none() {
            return Err(SdiveError::InvalidInput("the target must be a normal distribution".into()));
        }
        if let Some(c) = &self.contaminant {
            c.validate()?;
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SdiveError::InvalidInput(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if self.epsilon > 0.0 && self.contaminant.is_none() {
            return Err(SdiveError::InvalidInput("epsilon > 0 needs a contaminant".into()));
        }
        if self.n < 2 || self.replications == 0 || self.worker_count == 0 {
            return Err(SdiveError::InvalidInput("n >= 2, replications >= 1 and workers >= 1 are required".into()));
        }
        if self.alpha_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(SdiveError::InvalidInput("alpha and lambda grids must be nonempty".into()));
        }
        for (a, l) in self.cells() {
            self.fit_config(TuningPair::new(a, l)?).validate()?;
        }
        self.quad.validate()
    }

    /// Cells in report order: lambda outer, alpha inner.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.lambda_grid.iter().flat_map(|&l| self.alpha_grid.iter().map(move |&a| (a, l))).collect()
    }

    fn fit_config(&self, tuning: TuningPair) -> FitConfig {
        let c = FitConfig::new(self.method, tuning).with_quad(self.quad);
        match self.method {
            Method::Mdpde => c,
            _ => c.with_bandwidth(self.bandwidth_rule),
        }
    }

    /// Parses the sectioned `key = value` format.
    ///
    /// ```text
    /// [target]
    /// dist = normal(0, 3)
    /// [contaminant]
    /// dist = normal(15, 3)
    /// epsilon = 0.1
    /// [grid]
    /// alpha = 0, 0.5, 1
    /// lambda = -0.5, 0
    /// [run]
    /// n = 50
    /// replications = 1000
    /// method = msde-star
    /// bandwidth = auto        # or a number, or rel:<h0>
    /// seed = 1
    /// workers = 8
    /// normal_scale = sd       # or variance
    /// quad_tol = 1e-9
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<(String, String), (usize, String)> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| perr(ln, "unterminated section header"))?
                    .trim()
                    .to_ascii_lowercase();
                if !["target", "contaminant", "grid", "run"].contains(&name.as_str()) {
                    return Err(perr(ln, &format!("unknown section [{name}]")));
                }
                section = Some(name);
                continue;
            }
            let sec = section.clone().ok_or_else(|| perr(ln, "key outside of any section"))?;
            let (k, v) = line.split_once('=').ok_or_else(|| perr(ln, "expected key = value"))?;
            let key = k.trim().to_ascii_lowercase();
            let known: &[&str] = match sec.as_str() {
                "target" => &["dist"],
                "contaminant" => &["dist", "epsilon"],
                "grid" => &["alpha", "lambda"],
                _ => &["n", "replications", "method", "bandwidth", "seed", "workers", "normal_scale", "quad_tol"],
            };
            if !known.contains(&key.as_str()) {
                return Err(perr(ln, &format!("unknown key '{key}' in [{sec}]")));
            }
            if entries.insert((sec.clone(), key.clone()), (ln, v.trim().to_string())).is_some() {
                return Err(perr(ln, &format!("duplicate key '{key}' in [{sec}]")));
            }
        }

        let get = |s: &str, k: &str| entries.get(&(s.to_string(), k.to_string()));
        fn num<T: std::str::FromStr>(e: Option<&(usize, String)>, what: &str) -> Result<Option<T>> {
            match e {
                None => Ok(None),
                Some((ln, v)) => v.parse().map(Some).map_err(|_| perr(*ln, &format!("{what}: cannot parse '{v}'"))),
            }
        }

        let reading = match get("run", "normal_scale") {
            None => ScaleReading::StandardDeviation,
            Some((ln, v)) => match v.to_ascii_lowercase().as_str() {
                "sd" => ScaleReading::StandardDeviation,
                "variance" | "var" => ScaleReading::Variance,
                _ => return Err(perr(*ln, "normal_scale must be sd or variance")),
            },
        };
        let dist = |s: &str| -> Result<Option<DistSpec>> {
            match get(s, "dist") {
                None => Ok(None),
                Some((ln, v)) => DistSpec::parse_with(v, reading).map(Some).map_err(|e| perr(*ln, &e.to_string())),
            }
        };
        let grid = |k: &str| -> Result<Vec<f64>> {
            let (ln, v) = get("grid", k).ok_or_else(|| perr(0, &format!("[grid] {k} is required")))?;
            v.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| perr(*ln, &format!("bad {k} value '{}'", t.trim()))))
                .collect()
        };

        let mut c = SimulationConfig::new(grid("alpha")?, grid("lambda")?);
        c.target = dist("target")?.ok_or_else(|| perr(0, "[target] dist is required"))?;
        c.contaminant = dist("contaminant")?;
        c.epsilon = num(get("contaminant", "epsilon"), "epsilon")?.unwrap_or(0.0);
        c.n = num(get("run", "n"), "n")?.unwrap_or(c.n);
        c.replications = num(get("run", "replications"), "replications")?.unwrap_or(c.replications);
        c.seed = num(get("run", "seed"), "seed")?.unwrap_or(c.seed);
        c.worker_count = num(get("run", "workers"), "workers")?.unwrap_or(c.worker_count);
        if let Some((ln, v)) = get("run", "method") {
            c.method = v.parse().map_err(|e: SdiveError| perr(*ln, &e.to_string()))?;
        }
        if let Some((ln, v)) = get("run", "bandwidth") {
            c.bandwidth_rule = parse_bandwidth_rule(v).map_err(|e| perr(*ln, &e.to_string()))?;
        }
        if let Some(t) = num::<f64>(get("run", "quad_tol"), "quad_tol")? {
            let ln = get("run", "quad_tol").map(|e| e.0).unwrap_or(0);
            c.quad = QuadratureSpec::from_tolerance(t).map_err(|e| perr(ln, &e.to_string()))?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn perr(line: usize, message: &str) -> SdiveError {
    SdiveError::Parse { line, message: message.to_string() }
}

/// `auto`, a positive number, or `rel:<h0>`.
pub fn parse_bandwidth_rule(text: &str) -> Result<BandwidthRule> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("auto") {
        return Ok(BandwidthRule::NormalReference);
    }
    let bad = || SdiveError::InvalidInput(format!("bandwidth must be auto, <h> or rel:<h0>, got '{t}'"));
    let (rel, num) = match t.strip_prefix("rel:") {
        Some(r) => (true, r),
        None => (false, t),
    };
    let v: f64 = num.trim().parse().map_err(|_| bad())?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(bad());
    }
    Ok(if rel { BandwidthRule::Relative(v) } else { BandwidthRule::Fixed(v) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub alpha: f64,
    pub lambda: f64,
    pub parameter: String,
    pub bias: f64,
    pub mse: f64,
    /// Monte-Carlo standard error of `mse`.
    pub mc_stderr: f64,
    pub failures: usize,
    pub unreliable: bool,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub cells: Vec<CellRecord>,
    pub wall_time_s: f64,
}

impl SimulationReport {
    pub fn cell(&self, alpha: f64, lambda: f64, parameter: &str) -> Option<&CellRecord> {
        self.cells.iter().find(|c| c.alpha == alpha && c.lambda == lambda && c.parameter == parameter)
    }

    /// One row per cell and parameter.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,lambda,parameter,bias,mse,mc_stderr,failures,unreliable\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                fmt_num(c.alpha),
                fmt_num(c.lambda),
                c.parameter,
                fmt_num(c.bias),
                fmt_num(c.mse),
                fmt_num(c.mc_stderr),
                c.failures,
                c.unreliable
            );
        }
        out
    }

    /// Config echo plus timing.
    pub fn meta_json(&self) -> serde_json::Value {
        let c = &self.config;
        let rule = match c.bandwidth_rule {
            BandwidthRule::NormalReference => "auto".to_string(),
            BandwidthRule::Fixed(h) => format!("{h}"),
            BandwidthRule::Relative(h0) => format!("rel:{h0}"),
        };
        serde_json::json!({
            "target": c.target.to_string(),
            "contaminant": c.contaminant.map(|d| d.to_string()),
            "epsilon": c.epsilon,
            "n": c.n,
            "replications": c.replications,
            "alpha_grid": c.alpha_grid,
            "lambda_grid": c.lambda_grid,
            "method": c.method.as_str(),
            "bandwidth": rule,
            "seed": c.seed,
            "workers": c.worker_count,
            "cells": self.cells.len(),
            "wall_time_s": self.wall_time_s,
        })
    }
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r`; depends only on `(seed, r)`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    mix(mix(seed) ^ (r as u64))
}

/// Pairwise summation in index order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Fits every cell on one replication's sample; `None` marks a failed fit.
fn replicate(config: &SimulationConfig, tunings: &[TuningPair], r: usize) -> Vec<Option<Vec<f64>>> {
    let model = NormalModel;
    let sample = match sample_contaminated(
        &config.target,
        config.contaminant.as_ref(),
        config.epsilon,
        config.n,
        replication_seed(config.seed, r),
    ) {
        Ok(s) => s,
        Err(_) => return vec![None; tunings.len()],
    };
    tunings
        .iter()
        .map(|&t| match fit(&sample, &model, &config.fit_config(t)) {
            Ok(f) if f.converged => Some(f.theta_hat),
            _ => None,
        })
        .collect()
}

pub fn run_simulation(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let start = Instant::now();
    let cells = config.cells();
    let tunings: Vec<TuningPair> = cells.iter().map(|&(a, l)| TuningPair::new(a, l)).collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count)
        .build()
        .map_err(|e| SdiveError::InvalidInput(format!("cannot start worker pool: {e}")))?;
    let per_rep: Vec<Vec<Option<Vec<f64>>>> =
        pool.install(|| (0..config.replications).into_par_iter().map(|r| replicate(config, &tunings, r)).collect());

    let (mu, sigma) = config.target.normal_params().expect("validated");
    let truth = [mu, sigma];
    let names = NormalModel.param_names();
    let mut records = Vec::with_capacity(cells.len() * 2);
    for (ci, &(alpha, lambda)) in cells.iter().enumerate() {
        let ok: Vec<&Vec<f64>> = per_rep.iter().filter_map(|rep| rep[ci].as_ref()).collect();
        let failures = config.replications - ok.len();
        let unreliable = failures as f64 > UNRELIABLE_FAILURE_SHARE * config.replications as f64;
        for (j, name) in names.iter().enumerate() {
            let err: Vec<f64> = ok.iter().map(|t| t[j] - truth[j]).collect();
            let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
            let m = err.len() as f64;
            let (bias, mse, se) = if err.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let bias = pairwise_sum(&err) / m;
                let mse = pairwise_sum(&sq) / m;
                let dev: Vec<f64> = sq.iter().map(|s| (s - mse).powi(2)).collect();
                let var = if m > 1.0 { pairwise_sum(&dev) / (m - 1.0) } else { 0.0 };
                (bias, mse, (var / m).sqrt())
            };
            records.push(CellRecord {
                alpha,
                lambda,
                parameter: name.to_string(),
                bias,
                mse,
                mc_stderr: se,
                failures,
                unreliable: unreliable || err.is_empty(),
            });
        }
    }
    Ok(SimulationReport { config: config.clone(), cells: records, wall_time_s: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------------------
// Bandwidth stability.

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub alpha: f64,
    pub lambda: f64,
    pub h0: Vec<f64>,
    /// Scale estimates with only the data smoothed.
    pub msde: Vec<f64>,
    /// Scale estimates with data and model smoothed.
    pub msde_star: Vec<f64>,
    pub msde_range: f64,
    pub msde_star_range: f64,
    /// `msde_range / msde_star_range`; `None` when the denominator is zero.
    pub range_ratio: Option<f64>,
}

fn range(v: &[f64]) -> f64 {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Scale estimates over `h = h0 * sigma0` for both smoothing schemes.
pub fn bandwidth_stability_experiment(
    sample: &[f64],
    model: &dyn ParametricModel,
    pairs: &[(f64, f64)],
    h0_list: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<StabilityRow>> {
    if sample.is_empty() || h0_list.is_empty() {
        return Err(SdiveError::InvalidInput("sample and h0 list must be nonempty".into()));
    }
    let scale = model.dim() - 1;
    pairs
        .iter()
        .map(|&(alpha, lambda)| {
            let tuning = TuningPair::new(alpha, lambda)?;
            let scales = |method: Method| -> Result<Vec<f64>> {
                h0_list
                    .iter()
                    .map(|&h0| {
                        let cfg = FitConfig::new(method, tuning).with_bandwidth(BandwidthRule::Relative(h0)).with_quad(*quad);
                        let f = fit(sample, model, &cfg)?;
                        if !f.converged {
                            return Err(SdiveError::DegenerateFit(format!(
                                "{} at h0 = {h0} did not converge",
                                method.as_str()
                            )));
                        }
                        Ok(f.theta_hat[scale])
                    })
                    .collect()
            };
            let msde = scales(Method::MsdeBeran)?;
            let msde_star = scales(Method::MsdeStar)?;
            let (a, b) = (range(&msde), range(&msde_star));
            Ok(StabilityRow {
                alpha,
                lambda,
                h0: h0_list.to_vec(),
                msde,
                msde_star,
                msde_range: a,
                msde_star_range: b,
                range_ratio: (b > 0.0).then(|| a / b),
            })
        })
        .collect()
}
