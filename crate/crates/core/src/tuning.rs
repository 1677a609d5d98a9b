//! Data-driven choice of `(alpha, lambda)` by minimising an estimated summed MSE:
//! `|theta_hat - theta_pilot|^2 + trace(J^-1 V J^-1) / n`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::diagnostics::{fmt_num, sandwich_cov, u_alpha_star_with};
use crate::divergence::TuningPair;
use crate::error::{Result, SdiveError};
use crate::estimator::{fit, BandwidthRule, FitConfig, Method};
use crate::models::ParametricModel;
use crate::quadrature::QuadratureSpec;
use crate::smoothing::{KernelSpec, SmoothedModel};

#[derive(Debug, Clone, PartialEq)]
pub enum Pilot {
    /// MDPDE at `alpha = 1`.
    MdpdeAlphaOne,
    Explicit(Vec<f64>),
}

/// Source of `V*` in the variance term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceForm {
    /// Model expectation at `theta_hat`.
    #[default]
    Model,
    /// Sample covariance of `u^{alpha*}(X_i)` at `theta_hat`.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningSearchConfig {
    pub alpha_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub pilot: Pilot,
    pub bandwidth: BandwidthRule,
    pub variance: VarianceForm,
    pub quad: QuadratureSpec,
}

impl Default for TuningSearchConfig {
    fn default() -> Self {
        Self {
            alpha_grid: vec![0.0, 0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 1.0],
            lambda_grid: vec![-1.0, -0.5, -0.4, -0.3, 0.0, 0.5],
            pilot: Pilot::MdpdeAlphaOne,
            bandwidth: BandwidthRule::NormalReference,
            variance: VarianceForm::Model,
            quad: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCell {
    pub alpha: f64,
    pub lambda: f64,
    /// `None` when the fit or the covariance failed; such cells are excluded.
    pub theta: Option<Vec<f64>>,
    pub bias2: f64,
    pub var: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct TuningSelection {
    pub best: TuningPair,
    pub best_theta: Vec<f64>,
    pub pilot: Vec<f64>,
    pub bandwidth: f64,
    pub surface: Vec<SurfaceCell>,
}

impl TuningSelection {
    /// Columns `alpha,lambda,bias2,var,score`; failed cells have empty numeric fields.
    pub fn surface_csv(&self) -> String {
        let mut out = String::from("alpha,lambda,bias2,var,score\n");
        for c in &self.surface {
            if c.theta.is_some() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_num(c.alpha),
                    fmt_num(c.lambda),
                    fmt_num(c.bias2),
                    fmt_num(c.var),
                    fmt_num(c.score)
                );
            } else {
                let _ = writeln!(out, "{},{},,,", fmt_num(c.alpha), fmt_num(c.lambda));
            }
        }
        out
    }
}

fn empirical_sandwich(
    sample: &[f64],
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let p = model.dim();
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let us: Vec<DVector<f64>> = sample
        .iter()
        .map(|&x| u_alpha_star_with(&sm, alpha, x, quad).map(|v| DVector::from_vec(v)))
        .collect::<Result<_>>()?;
    let n = sample.len() as f64;
    let mean = us.iter().fold(DVector::zeros(p), |a, u| a + u) / n;
    let v = us.iter().fold(DMatrix::zeros(p, p), |a, u| a + (u - &mean) * (u - &mean).transpose()) / n;
    let j = sandwich_cov(model, theta, kernel, alpha, quad)?.j_star;
    let jinv = j.try_inverse().ok_or_else(|| SdiveError::AssumptionViolation("J* is singular".into()))?;
    Ok(&jinv * v * &jinv)
}

fn evaluate_cell(
    sample: &[f64],
    model: &dyn ParametricModel,
    config: &TuningSearchConfig,
    pilot: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    lambda: f64,
) -> SurfaceCell {
    let failed = SurfaceCell { alpha, lambda, theta: None, bias2: f64::NAN, var: f64::NAN, score: f64::NAN };
    let run = || -> Result<SurfaceCell> {
        let tuning = TuningPair::new(alpha, lambda)?;
        let cfg = FitConfig::new(Method::MsdeStar, tuning).with_bandwidth(BandwidthRule::Fixed(kernel.bandwidth)).with_quad(config.quad);
        let f = fit(sample, model, &cfg)?;
        if !f.converged {
            return Err(SdiveError::DegenerateFit("cell fit did not converge".into()));
        }
        let sandwich = match config.variance {
            VarianceForm::Model => sandwich_cov(model, &f.theta_hat, kernel, alpha, &config.quad)?.sandwich,
            VarianceForm::Empirical => empirical_sandwich(sample, model, &f.theta_hat, kernel, alpha, &config.quad)?,
        };
        let bias2: f64 = f.theta_hat.iter().zip(pilot).map(|(t, p)| (t - p) * (t - p)).sum();
        let var = sandwich.trace() / sample.len() as f64;
        Ok(SurfaceCell { alpha, lambda, theta: Some(f.theta_hat), bias2, var, score: bias2 + var })
    };
    run().unwrap_or(failed)
}

pub fn select_tuning(sample: &[f64], model: &dyn ParametricModel, config: &TuningSearchConfig) -> Result<TuningSelection> {
    if sample.len() < 10 {
        return Err(SdiveError::InvalidInput(format!("tuning needs at least 10 observations, got {}", sample.len())));
    }
    if config.alpha_grid.is_empty() || config.lambda_grid.is_empty() {
        return Err(SdiveError::InvalidInput("alpha and lambda grids must be nonempty".into()));
    }
    for &a in &config.alpha_grid {
        if !(0.0..=1.0).contains(&a) {
            return Err(SdiveError::InvalidInput(format!("alpha grid values must lie in [0, 1], got {a}")));
        }
    }
    let pilot = match &config.pilot {
        Pilot::Explicit(t) => {
            model.check(t).map_err(|e| SdiveError::TuningAbort(format!("invalid pilot: {e}")))?;
            t.clone()
        }
        Pilot::MdpdeAlphaOne => {
            let cfg = FitConfig::new(Method::Mdpde, TuningPair::new(1.0, 0.0)?).with_quad(config.quad);
            match fit(sample, model, &cfg) {
                Ok(f) if f.converged => f.theta_hat,
                Ok(_) => return Err(SdiveError::TuningAbort("pilot MDPDE did not converge".into())),
                Err(e) => return Err(SdiveError::TuningAbort(format!("pilot MDPDE failed: {e}"))),
            }
        }
    };
    let h = config.bandwidth.resolve(sample)?;
    let kernel = KernelSpec::gaussian(h)?;
    let cells: Vec<(f64, f64)> =
        config.lambda_grid.iter().flat_map(|&l| config.alpha_grid.iter().map(move |&a| (a, l))).collect();
    let surface: Vec<SurfaceCell> =
        cells.par_iter().map(|&(a, l)| evaluate_cell(sample, model, config, &pilot, kernel, a, l)).collect();
    let best = surface
        .iter()
        .filter(|c| c.theta.is_some() && c.score.is_finite())
        .min_by(|x, y| {
            x.score
                .total_cmp(&y.score)
                .then(x.alpha.total_cmp(&y.alpha))
                .then(x.lambda.abs().total_cmp(&y.lambda.abs()))
        })
        .ok_or_else(|| SdiveError::TuningAbort("every grid cell failed".into()))?;
    Ok(TuningSelection {
        best: TuningPair::new(best.alpha, best.lambda)?,
        best_theta: best.theta.clone().expect("filtered"),
        pilot,
        bandwidth: h,
        surface,
    })
}
