//! Influence functions, `J*`/`V*` matrices, sandwich covariance and
//! transparent-kernel checks.
//!
//! Notation: `f*` is the smoothed model, `u~` its score, `W(x, y, h)` the
//! kernel. The weighted kernel integrals are
//!
//! ```text
//! u^{alpha*}(y)  = int u~(x)        f*(x)^alpha W(x, y, h) dx
//! u^{2alpha*}(y) = int u~(x) u~(x)' f*(x)^alpha W(x, y, h) dx
//! u^{1alpha*}(y) = int grad u~(x)   f*(x)^alpha W(x, y, h) dx
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::divergence::{k_of_log_ratio, log_ratio, DensityEvaluator, TuningPair};
use crate::error::{Result, SdiveError};
use crate::estimator::{fit_functional, FitResult, SolverOptions};
use crate::models::ParametricModel;
use crate::quadrature::{integrate_vec, QuadratureSpec};
use crate::smoothing::{KernelSpec, SmoothedDensity, SmoothedModel, CONVOLUTION_WINDOW};

/// Tolerances for integrals that are nested or differenced.
fn tight(quad: &QuadratureSpec) -> QuadratureSpec {
    quad.with_tolerance(quad.abs_tol.min(1e-13), quad.rel_tol.min(1e-11))
}

/// Returns the symmetric part of `m` and its largest asymmetry.
pub fn symmetrize(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let asym = (m - m.transpose()).amax() * 0.5;
    ((m + m.transpose()) * 0.5, asym)
}

fn check_pd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.clone().cholesky().is_none() {
        return Err(SdiveError::AssumptionViolation(format!("{what} is not positive definite: {m}")));
    }
    Ok(())
}

/// Interval carrying the kernel mass around `y`.
fn kernel_window(y: f64, h: f64) -> [f64; 3] {
    [y - CONVOLUTION_WINDOW * h, y, y + CONVOLUTION_WINDOW * h]
}

#[derive(Clone, Copy)]
enum Weighted {
    Score,
    Outer,
    Hessian,
}

// int (kernel-weighted) of score, score outer product or score Hessian times f*^e.
fn weighted_kernel_integral(sm: &SmoothedModel<'_>, exponent: f64, y: f64, kind: Weighted, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    let p = sm.dim();
    let dim = match kind {
        Weighted::Score => p,
        _ => p * p,
    };
    let mut u = vec![0.0; p];
    let mut hess = vec![0.0; p * p];
    let mut fill = |x: f64, o: &mut [f64], weight: f64| {
        let w = sm.pdf(x).powf(exponent) * weight;
        match kind {
            Weighted::Score => {
                sm.score_into(x, &mut u);
                for j in 0..p {
                    o[j] = w * u[j];
                }
            }
            Weighted::Outer => {
                sm.score_into(x, &mut u);
                for j in 0..p {
                    for k in 0..p {
                        o[j * p + k] = w * u[j] * u[k];
                    }
                }
            }
            Weighted::Hessian => {
                sm.hessian_into(x, &mut hess);
                for j in 0..p * p {
                    o[j] = w * hess[j];
                }
            }
        }
    };
    let h = sm.bandwidth();
    if h == 0.0 {
        let mut o = vec![0.0; dim];
        fill(y, &mut o, 1.0);
        return Ok(o);
    }
    let kernel = KernelSpec::gaussian(h)?;
    integrate_vec(|x, o| fill(x, o, kernel.weight(x, y)), dim, &kernel_window(y, h), quad).map(|r| r.value)
}

/// `u^{alpha*}(y)` for an already built smoothed model, with weight exponent `exponent`.
pub fn u_alpha_star_with(sm: &SmoothedModel<'_>, exponent: f64, y: f64, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    weighted_kernel_integral(sm, exponent, y, Weighted::Score, quad)
}

pub fn u_alpha_star(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    y: f64,
    quad: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    u_alpha_star_with(&sm, alpha, y, quad)
}

pub fn u_2alpha_star(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    y: f64,
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let p = model.dim();
    let v = weighted_kernel_integral(&sm, alpha, y, Weighted::Outer, quad)?;
    Ok(DMatrix::from_row_slice(p, p, &v))
}

pub fn u_1alpha_star(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    y: f64,
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let p = model.dim();
    let v = weighted_kernel_integral(&sm, alpha, y, Weighted::Hessian, quad)?;
    Ok(DMatrix::from_row_slice(p, p, &v))
}

/// Integral over the smoothed model's truncation interval.
fn integrate_smoothed<F: FnMut(f64, &mut [f64])>(sm: &SmoothedModel<'_>, dim: usize, quad: &QuadratureSpec, f: F) -> Result<Vec<f64>> {
    let (lo, hi) = sm.truncation(quad.truncation_mass);
    integrate_vec(f, dim, &[lo, sm.theta()[0], hi], quad).map(|r| r.value)
}

/// Expectation under the unsmoothed model `f_theta`.
fn expect_model<F: FnMut(f64, &mut [f64]) -> Result<()>>(
    model: &dyn ParametricModel,
    theta: &[f64],
    dim: usize,
    quad: &QuadratureSpec,
    mut f: F,
) -> Result<Vec<f64>> {
    let (lo, hi) = model.truncation(theta, quad.truncation_mass);
    let mut failure = None;
    let r = integrate_vec(
        |y, o| {
            if let Err(e) = f(y, o) {
                failure.get_or_insert(e);
                o.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let d = model.density(theta, y);
            o.iter_mut().for_each(|v| *v *= d);
        },
        dim,
        &[lo, theta[0], hi],
        quad,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(r.value),
    }
}

/// `int u~ (f*)^{1+alpha}`, which equals `E_theta[u^{alpha*}(X)]`.
fn mean_u_alpha_star(sm: &SmoothedModel<'_>, alpha: f64, quad: &QuadratureSpec) -> Result<Vec<f64>> {
    let p = sm.dim();
    let mut u = vec![0.0; p];
    integrate_smoothed(sm, p, quad, |x, o| {
        let w = sm.pdf(x).powf(1.0 + alpha);
        sm.score_into(x, &mut u);
        for j in 0..p {
            o[j] = w * u[j];
        }
    })
}

fn j_star_single(sm: &SmoothedModel<'_>, alpha: f64, quad: &QuadratureSpec) -> Result<DMatrix<f64>> {
    let p = sm.dim();
    let mut u = vec![0.0; p];
    let v = integrate_smoothed(sm, p * p, quad, |x, o| {
        let w = sm.pdf(x).powf(1.0 + alpha);
        sm.score_into(x, &mut u);
        for j in 0..p {
            for k in 0..p {
                o[j * p + k] = w * u[j] * u[k];
            }
        }
    })?;
    Ok(DMatrix::from_row_slice(p, p, &v))
}

/// `J* = int u~ u~' (f*)^{1+alpha}`, checked positive definite.
pub fn j_star_model(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let j = symmetrize(&j_star_single(&sm, alpha, quad)?).0;
    check_pd(&j, "J*")?;
    Ok(j)
}

/// `J*` computed three independent ways.
#[derive(Debug, Clone)]
pub struct JStarForms {
    /// `int u~ u~' (f*)^{1+alpha}`.
    pub single: DMatrix<f64>,
    /// `E_theta[u^{2alpha*}(X)]`, nested quadrature.
    pub expected_outer: DMatrix<f64>,
    /// `E_theta[-grad u^{alpha*}(X)]`, central differences in `theta` inside the expectation.
    pub expected_gradient: DMatrix<f64>,
}

impl JStarForms {
    pub fn max_pairwise_gap(&self) -> f64 {
        let a = (&self.single - &self.expected_outer).amax();
        let b = (&self.single - &self.expected_gradient).amax();
        let c = (&self.expected_outer - &self.expected_gradient).amax();
        a.max(b).max(c)
    }
}

pub fn j_star_forms(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<JStarForms> {
    let p = model.dim();
    let inner = tight(quad);
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let single = j_star_single(&sm, alpha, &inner)?;

    let outer = expect_model(model, theta, p * p, &inner, |y, o| {
        o.copy_from_slice(&weighted_kernel_integral(&sm, alpha, y, Weighted::Outer, &inner)?);
        Ok(())
    })?;

    let spread = model.spread(theta);
    let shifted: Vec<(SmoothedModel<'_>, SmoothedModel<'_>, f64)> = (0..p)
        .map(|j| {
            let s = 1e-4 * theta[j].abs().max(spread);
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[j] += s;
            dn[j] -= s;
            Ok((
                SmoothedModel::new(model, &up, kernel, *quad)?,
                SmoothedModel::new(model, &dn, kernel, *quad)?,
                s,
            ))
        })
        .collect::<Result<_>>()?;
    let grad = expect_model(model, theta, p * p, &inner, |y, o| {
        for (j, (up, dn, s)) in shifted.iter().enumerate() {
            let a = u_alpha_star_with(up, alpha, y, &inner)?;
            let b = u_alpha_star_with(dn, alpha, y, &inner)?;
            for i in 0..p {
                o[i * p + j] = -(a[i] - b[i]) / (2.0 * s);
            }
        }
        Ok(())
    })?;

    Ok(JStarForms {
        single,
        expected_outer: DMatrix::from_row_slice(p, p, &outer),
        expected_gradient: DMatrix::from_row_slice(p, p, &grad),
    })
}

/// `V* = Var_theta[u^{alpha*}(X)]` by nested quadrature.
pub fn v_star_model(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<DMatrix<f64>> {
    let p = model.dim();
    let inner = tight(quad);
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let m = expect_model(model, theta, p + p * p, &inner, |y, o| {
        let u = u_alpha_star_with(&sm, alpha, y, &inner)?;
        o[..p].copy_from_slice(&u);
        for j in 0..p {
            for k in 0..p {
                o[p + j * p + k] = u[j] * u[k];
            }
        }
        Ok(())
    })?;
    let mean = DVector::from_column_slice(&m[..p]);
    let second = DMatrix::from_row_slice(p, p, &m[p..]);
    Ok(symmetrize(&(second - &mean * mean.transpose())).0)
}

#[derive(Debug, Clone)]
pub struct AsymptoticCov {
    pub j_star: DMatrix<f64>,
    pub v_star: DMatrix<f64>,
    /// `J^{-1} V J^{-1}`: covariance of `sqrt(n) (theta_hat - theta)`.
    pub sandwich: DMatrix<f64>,
}

fn assemble(j: DMatrix<f64>, v: DMatrix<f64>) -> Result<AsymptoticCov> {
    check_pd(&j, "J*")?;
    let jinv = j.clone().try_inverse().ok_or_else(|| SdiveError::AssumptionViolation("J* is singular".into()))?;
    let sandwich = symmetrize(&(&jinv * &v * &jinv)).0;
    Ok(AsymptoticCov { j_star: j, v_star: v, sandwich })
}

/// Sandwich covariance of the smoothed estimator at the model.
pub fn sandwich_cov(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    quad: &QuadratureSpec,
) -> Result<AsymptoticCov> {
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let j = symmetrize(&j_star_single(&sm, alpha, &tight(quad))?).0;
    let v = v_star_model(model, theta, kernel, alpha, quad)?;
    assemble(j, v)
}

/// The `h -> 0` limit: `E[u u' f^alpha]^{-1} Var[u f^alpha] E[u u' f^alpha]^{-1}`.
///
/// This is also the asymptotic covariance of the MDPDE.
pub fn sandwich_unsmoothed(model: &dyn ParametricModel, theta: &[f64], alpha: f64, quad: &QuadratureSpec) -> Result<AsymptoticCov> {
    let p = model.dim();
    let inner = tight(quad);
    let mut u = vec![0.0; p];
    let m = expect_model(model, theta, p + 2 * p * p, &inner, |y, o| {
        let fa = model.density(theta, y).powf(alpha);
        model.score_into(theta, y, &mut u);
        for j in 0..p {
            o[j] = fa * u[j];
            for k in 0..p {
                o[p + j * p + k] = fa * u[j] * u[k];
                o[p + p * p + j * p + k] = fa * fa * u[j] * u[k];
            }
        }
        Ok(())
    })?;
    let mean = DVector::from_column_slice(&m[..p]);
    let j = DMatrix::from_row_slice(p, p, &m[p..p + p * p]);
    let v = DMatrix::from_row_slice(p, p, &m[p + p * p..]) - &mean * mean.transpose();
    assemble(symmetrize(&j).0, symmetrize(&v).0)
}

/// Asymptotic covariance of `theta_hat` (sandwich divided by `n`) for a fit.
///
/// Smoothed-model fits use the kernel sandwich; fits with an unsmoothed model
/// (Beran-type, MDPDE) use the unsmoothed limit.
pub fn attach_covariance(
    fit: &mut FitResult,
    model: &dyn ParametricModel,
    kernel: Option<KernelSpec>,
    alpha: f64,
    n: usize,
    quad: &QuadratureSpec,
) -> Result<()> {
    let cov = match kernel {
        Some(k) if !k.is_degenerate() => sandwich_cov(model, &fit.theta_hat, k, alpha, quad)?,
        _ => sandwich_unsmoothed(model, &fit.theta_hat, alpha, quad)?,
    };
    fit.asymptotic_cov = Some(cov.sandwich / n as f64);
    Ok(())
}

// ---------------------------------------------------------------------------
// Influence functions.

#[derive(Debug, Clone, PartialEq)]
pub struct IFReport {
    pub param_names: Vec<String>,
    pub y_grid: Vec<f64>,
    /// `T'(y)` per grid point.
    pub if_values: Vec<Vec<f64>>,
    /// `T''(y)` per grid point, scalar models only; `None` where undefined.
    pub second_order: Option<Vec<Option<f64>>>,
    pub at_model: bool,
}

impl IFReport {
    /// CSV with columns `y`, one `if_<param>` per parameter, and `t2` when present.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y");
        for n in &self.param_names {
            out.push_str(&format!(",if_{n}"));
        }
        if self.second_order.is_some() {
            out.push_str(",t2");
        }
        out.push('\n');
        for (i, y) in self.y_grid.iter().enumerate() {
            out.push_str(&fmt_num(*y));
            for v in &self.if_values[i] {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
            if let Some(t2) = &self.second_order {
                out.push(',');
                if let Some(v) = t2[i] {
                    out.push_str(&fmt_num(v));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Six significant digits, `.` decimal separator, no locale dependence.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" { "0".into() } else { s }
    } else {
        format!("{v:.5e}")
    }
}

/// First-order influence function at the model, `[J*]^{-1}(u^{alpha*}(y) - E u^{alpha*})`.
///
/// Only `tuning.alpha()` is read: at the model the influence function does not
/// depend on `lambda`.
pub fn influence_function_model(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    tuning: &TuningPair,
    y_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<IFReport> {
    let alpha = tuning.alpha();
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let j = symmetrize(&j_star_single(&sm, alpha, quad)?).0;
    check_pd(&j, "J*")?;
    let jinv = j.try_inverse().ok_or_else(|| SdiveError::AssumptionViolation("J* is singular".into()))?;
    let mean = DVector::from_column_slice(&mean_u_alpha_star(&sm, alpha, quad)?);
    let values = y_grid
        .par_iter()
        .map(|&y| {
            let u = DVector::from_column_slice(&u_alpha_star_with(&sm, alpha, y, quad)?);
            Ok((&jinv * (u - &mean)).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IFReport {
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        y_grid: y_grid.to_vec(),
        if_values: values,
        second_order: None,
        at_model: true,
    })
}

/// Influence function at a general `G`, with `theta^g` found by fitting `f*` to `g*`.
#[derive(Debug, Clone)]
pub struct GeneralIF {
    pub report: IFReport,
    pub theta_g: Vec<f64>,
    /// `J*_g / A` (the common factor `A` cancels in the influence function).
    pub j_g: DMatrix<f64>,
}

pub fn influence_function_general(
    model: &dyn ParametricModel,
    g: std::sync::Arc<dyn DensityEvaluator>,
    kernel: KernelSpec,
    tuning: &TuningPair,
    y_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<GeneralIF> {
    let g_star = SmoothedDensity::new(g.clone(), kernel, *quad);
    // Start the inner fit from the moments of g.
    let (lo, hi) = g.truncation(quad.truncation_mass);
    let mut pts = vec![lo, hi];
    pts.extend(g.breakpoints());
    let mom = integrate_vec(
        |x, o| {
            let d = g.pdf(x);
            o[0] = d * x;
            o[1] = d * x * x;
        },
        2,
        &pts,
        quad,
    )?
    .value;
    let sd = (mom[1] - mom[0] * mom[0]).max(1e-12).sqrt();
    let start = model.from_moments(mom[0], sd);
    let fit = fit_functional(&g_star, model, kernel, *tuning, *quad, &start, &SolverOptions::default())?;
    if !fit.converged {
        return Err(SdiveError::DegenerateFit(format!("best-fitting parameter did not converge: {:?}", fit.theta_hat)));
    }
    let theta_g = fit.theta_hat.clone();
    let sm = SmoothedModel::new(model, &theta_g, kernel, *quad)?;
    let p = model.dim();
    let (a, b, alpha) = (tuning.a(), tuning.b(), tuning.alpha());

    // Integrals over x of the full g* against f*: J*_g / A and the centring term of N*_g / A.
    let (gl, gh) = g_star.truncation(quad.truncation_mass);
    let (fl, fh) = sm.truncation(quad.truncation_mass);
    let mut dom = vec![gl.min(fl), gh.max(fh), theta_g[0]];
    dom.extend(g_star.breakpoints());
    let mut u = vec![0.0; p];
    let mut hs = vec![0.0; p * p];
    let m = integrate_vec(
        |x, o| {
            let f = sm.pdf(x);
            if !(f > 0.0) {
                o.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let l = log_ratio(g_star.pdf(x), f);
            let fp = f.powf(1.0 + alpha);
            let k = k_of_log_ratio(l, a);
            sm.score_into(x, &mut u);
            sm.hessian_into(x, &mut hs);
            let ra = fp * (a * l).exp();
            for j in 0..p {
                o[j] = ra * u[j];
                for l in 0..p {
                    let uu = u[j] * u[l];
                    o[p + j * p + l] = fp * uu + (-hs[j * p + l] - b * uu) * k * fp;
                }
            }
        },
        p + p * p,
        &dom,
        &tight(quad),
    )?
    .value;
    let centre = DVector::from_column_slice(&m[..p]);
    let j_g = DMatrix::from_row_slice(p, p, &m[p..]);
    let jinv = j_g.clone().try_inverse().ok_or_else(|| SdiveError::AssumptionViolation("J*_g is singular".into()))?;

    let h = kernel.bandwidth;
    let values = y_grid
        .par_iter()
        .map(|&y| {
            let mut u = vec![0.0; p];
            let mut term = |x: f64, o: &mut [f64], weight: f64| {
                let f = sm.pdf(x);
                if !(f > 0.0) || weight == 0.0 {
                    o.iter_mut().for_each(|v| *v = 0.0);
                    return;
                }
                let l = log_ratio(g_star.pdf(x), f);
                let w = f.powf(alpha) * ((a - 1.0) * l).exp() * weight;
                sm.score_into(x, &mut u);
                for j in 0..p {
                    o[j] = w * u[j];
                }
            };
            let first = if h == 0.0 {
                let mut o = vec![0.0; p];
                term(y, &mut o, 1.0);
                o
            } else {
                integrate_vec(|x, o| term(x, o, kernel.weight(x, y)), p, &kernel_window(y, h), quad)?.value
            };
            let n = DVector::from_column_slice(&first) - &centre;
            Ok((&jinv * n).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneralIF {
        report: IFReport {
            param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
            y_grid: y_grid.to_vec(),
            if_values: values,
            second_order: None,
            at_model: false,
        },
        theta_g,
        j_g,
    })
}

/// Pieces of the second-order influence function at one contamination point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderPoint {
    pub y: f64,
    pub t1: f64,
    pub t2: f64,
    /// `lambda`-free part: `T' m1 / J`.
    pub m1: f64,
    /// Multiplier of `lambda (1 - alpha) / J`.
    pub m2: f64,
}

/// Constants of the second-order expansion that do not depend on `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondOrderConstants {
    pub j: f64,
    pub mean_u: f64,
    /// `int u~' (f*)^{1+alpha}`.
    pub d0: f64,
    /// `int u~^3 (f*)^{1+alpha}`.
    pub d1: f64,
    /// `int u~ u~' (f*)^{1+alpha}`.
    pub d2: f64,
}

pub fn second_order_constants(sm: &SmoothedModel<'_>, alpha: f64, quad: &QuadratureSpec) -> Result<SecondOrderConstants> {
    let mut u = [0.0];
    let mut hs = [0.0];
    let v = integrate_smoothed(sm, 5, quad, |x, o| {
        let w = sm.pdf(x).powf(1.0 + alpha);
        sm.score_into(x, &mut u);
        sm.hessian_into(x, &mut hs);
        o[0] = w * u[0] * u[0];
        o[1] = w * u[0];
        o[2] = w * hs[0];
        o[3] = w * u[0].powi(3);
        o[4] = w * u[0] * hs[0];
    })?;
    Ok(SecondOrderConstants { j: v[0], mean_u: v[1], d0: v[2], d1: v[3], d2: v[4] })
}

/// Second-order influence function `T''(y)` for a scalar parameter at the model.
///
/// Obtained by differentiating the estimating equation twice along
/// `G_eps = (1 - eps) F_theta + eps delta_y`:
///
/// ```text
/// J T'' = T' m1 + lambda (1 - alpha) m2
/// m1 = 2 u1 + 2 alpha u2 - 2 alpha J - 2 D0 - T' ((1 + 2 alpha) D1 + 3 D2)
/// m2 = Q - 2 T' (u2 - J) + T'^2 D1
/// Q  = int (f*)^{alpha-1} (W - f*)^2 u~
/// ```
///
/// with `u1 = u^{1alpha*}(y)`, `u2 = u^{2alpha*}(y)`.
pub fn second_order_if(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    tuning: &TuningPair,
    y_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<SecondOrderPoint>> {
    if model.dim() != 1 {
        return Err(SdiveError::InvalidInput("second-order influence needs a scalar parameter".into()));
    }
    if kernel.is_degenerate() {
        return Err(SdiveError::InvalidInput("second-order influence needs a positive bandwidth".into()));
    }
    let alpha = tuning.alpha();
    let inner = tight(quad);
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let c = second_order_constants(&sm, alpha, &inner)?;
    let coef = tuning.a() - 1.0;
    let h = kernel.bandwidth;
    y_grid
        .par_iter()
        .map(|&y| {
            let mut u = [0.0];
            let mut hs = [0.0];
            let v = integrate_vec(
                |x, o| {
                    let f = sm.pdf(x);
                    let w = kernel.weight(x, y);
                    sm.score_into(x, &mut u);
                    sm.hessian_into(x, &mut hs);
                    let fa = f.powf(alpha);
                    o[0] = fa * w * u[0];
                    o[1] = fa * w * u[0] * u[0];
                    o[2] = fa * w * hs[0];
                    o[3] = if f > 0.0 { f.powf(alpha - 1.0) * w * w * u[0] } else { 0.0 };
                },
                4,
                &kernel_window(y, h),
                &inner,
            )?
            .value;
            let (ua, u2, u1, w2) = (v[0], v[1], v[2], v[3]);
            let t1 = (ua - c.mean_u) / c.j;
            let q = w2 - 2.0 * ua + c.mean_u;
            let m1 = 2.0 * u1 + 2.0 * alpha * u2 - 2.0 * alpha * c.j - 2.0 * c.d0
                - t1 * ((1.0 + 2.0 * alpha) * c.d1 + 3.0 * c.d2);
            let m2 = q - 2.0 * t1 * (u2 - c.j) + t1 * t1 * c.d1;
            let t2 = (t1 * m1 + coef * m2) / c.j;
            Ok(SecondOrderPoint { y, t1, t2, m1, m2 })
        })
        .collect()
}

/// [`IFReport`] with both orders for a scalar model.
pub fn second_order_report(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    tuning: &TuningPair,
    y_grid: &[f64],
    form: SecondOrderForm,
    quad: &QuadratureSpec,
) -> Result<IFReport> {
    let (t1, t2): (Vec<Vec<f64>>, Vec<Option<f64>>) = match form {
        SecondOrderForm::Derived => second_order_if(model, theta, kernel, tuning, y_grid, quad)?
            .iter()
            .map(|p| (vec![p.t1], p.t2.is_finite().then_some(p.t2)))
            .unzip(),
        SecondOrderForm::Printed => second_order_if_printed(model, theta, kernel, tuning, y_grid, quad)?
            .into_iter()
            .map(|(_, t1, t2)| (vec![t1], t2))
            .unzip(),
    };
    Ok(IFReport {
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        y_grid: y_grid.to_vec(),
        if_values: t1,
        second_order: Some(t2),
        at_model: true,
    })
}

/// Which expression for `T''` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SecondOrderForm {
    /// Derived from the estimating equation; see [`second_order_if`].
    #[default]
    Derived,
    /// The closed form `T' J^-1 (m1 + lambda (1-alpha) m2)` with
    /// `m2 = D1 T' - 2 u2 + (u^{(alpha-1)*} - E u^{alpha*}) / (u^{alpha*} - E u^{alpha*})`,
    /// which has a pole where `u^{alpha*}(y)` equals its mean.
    Printed,
}

/// `T''(y)` by the printed closed form; `None` at its pole.
pub fn second_order_if_printed(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    tuning: &TuningPair,
    y_grid: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<(f64, f64, Option<f64>)>> {
    if model.dim() != 1 {
        return Err(SdiveError::InvalidInput("second-order influence needs a scalar parameter".into()));
    }
    if kernel.is_degenerate() {
        return Err(SdiveError::InvalidInput("second-order influence needs a positive bandwidth".into()));
    }
    let alpha = tuning.alpha();
    let inner = tight(quad);
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let c = second_order_constants(&sm, alpha, &inner)?;
    let coef = tuning.a() - 1.0;
    let h = kernel.bandwidth;
    y_grid
        .par_iter()
        .map(|&y| {
            let mut u = [0.0];
            let mut hs = [0.0];
            let v = integrate_vec(
                |x, o| {
                    let f = sm.pdf(x);
                    let w = kernel.weight(x, y);
                    sm.score_into(x, &mut u);
                    sm.hessian_into(x, &mut hs);
                    let fa = f.powf(alpha);
                    o[0] = fa * w * u[0];
                    o[1] = fa * w * u[0] * u[0];
                    o[2] = fa * w * hs[0];
                    o[3] = if f > 0.0 { f.powf(alpha - 1.0) * w * u[0] } else { 0.0 };
                },
                4,
                &kernel_window(y, h),
                &inner,
            )?
            .value;
            let (ua, u2, u1, uam1) = (v[0], v[1], v[2], v[3]);
            let centred = ua - c.mean_u;
            let t1 = centred / c.j;
            // sqrt(J) sets the scale of u^{alpha*}.
            if centred.abs() <= 1e-10 * c.j.sqrt() {
                return Ok((y, t1, None));
            }
            let m1 = 2.0 * u1 + 2.0 * alpha * u2 - 2.0 * c.j - t1 * ((1.0 + 2.0 * alpha) * c.d1 + 3.0 * c.d2);
            let m2 = c.d1 * t1 - 2.0 * u2 + (uam1 - c.mean_u) / centred;
            let t2 = t1 / c.j * (m1 + coef * m2);
            Ok((y, t1, t2.is_finite().then_some(t2)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Transparency.

#[derive(Debug, Clone)]
pub struct TransparencyReport {
    pub m: DMatrix<f64>,
    pub l: DVector<f64>,
    pub max_residual: f64,
    pub transparent: bool,
}

/// Threshold on the worst residual for declaring a kernel transparent.
pub const TRANSPARENCY_TOL: f64 = 1e-6;

/// 25 equispaced points over `theta_0 +- 5` model spreads.
pub fn default_transparency_grid(model: &dyn ParametricModel, theta: &[f64]) -> Vec<f64> {
    let s = model.spread(theta);
    (0..25).map(|i| theta[0] - 5.0 * s + 10.0 * s * i as f64 / 24.0).collect()
}

/// Least-squares fit of `u^{alpha*}(y) = M f^alpha(y) u(y) + L` over `grid`.
pub fn transparency_residual(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    alpha: f64,
    quad: &QuadratureSpec,
    grid: &[f64],
) -> Result<TransparencyReport> {
    let p = model.dim();
    if grid.len() < 2 * p + 2 {
        return Err(SdiveError::DegenerateGrid(format!("need at least {} grid points, got {}", 2 * p + 2, grid.len())));
    }
    let inner = tight(quad);
    let sm = SmoothedModel::new(model, theta, kernel, *quad)?;
    let n = grid.len();
    let mut x = DMatrix::zeros(n, p + 1);
    let mut y = DMatrix::zeros(n, p);
    let mut u = vec![0.0; p];
    for (i, &g) in grid.iter().enumerate() {
        let fa = model.density(theta, g).powf(alpha);
        model.score_into(theta, g, &mut u);
        for j in 0..p {
            x[(i, j)] = fa * u[j];
        }
        x[(i, p)] = 1.0;
        let us = u_alpha_star_with(&sm, alpha, g, &inner)?;
        for j in 0..p {
            y[(i, j)] = us[j];
        }
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(SdiveError::DegenerateGrid("regressors are collinear on this grid".into()));
    }
    let coef = svd.solve(&y, 1e-14 * smax).map_err(|e| SdiveError::DegenerateGrid(e.to_string()))?;
    let resid = &y - &x * &coef;
    let max_residual = resid.amax();
    let m = coef.rows(0, p).transpose();
    let l = coef.row(p).transpose();
    Ok(TransparencyReport { m, l, max_residual, transparent: max_residual <= TRANSPARENCY_TOL })
}

// ---------------------------------------------------------------------------
// Closed forms for the normal model with a gaussian kernel.

/// Closed forms for `N(theta, sigma^2)` with known `sigma` and a gaussian kernel.
pub mod normal_mean {
    use super::PI;

    fn s2(sigma: f64, h: f64) -> f64 {
        sigma * sigma + h * h
    }
    fn c(sigma: f64, h: f64, alpha: f64) -> f64 {
        alpha * h * h + h * h + sigma * sigma
    }
    fn decay(d: f64, sigma: f64, h: f64, alpha: f64) -> f64 {
        (-alpha * d * d / (2.0 * c(sigma, h, alpha))).exp()
    }

    /// `C_{alpha,h} = (2 pi)^{-alpha/2} (sigma^2+h^2)^{-(alpha-1)/2} (alpha h^2 + h^2 + sigma^2)^{-3/2}`.
    pub fn c_alpha_h(sigma: f64, h: f64, alpha: f64) -> f64 {
        (2.0 * PI).powf(-alpha / 2.0) * s2(sigma, h).powf(-(alpha - 1.0) / 2.0) * c(sigma, h, alpha).powf(-1.5)
    }

    /// `u^{alpha*}(y) = C (y - theta) exp(-alpha (y-theta)^2 / (2c))`.
    pub fn u_alpha_star(d: f64, sigma: f64, h: f64, alpha: f64) -> f64 {
        c_alpha_h(sigma, h, alpha) * d * decay(d, sigma, h, alpha)
    }

    pub fn u_2alpha_star(d: f64, sigma: f64, h: f64, alpha: f64) -> f64 {
        let (s2, c) = (s2(sigma, h), c(sigma, h, alpha));
        c_alpha_h(sigma, h, alpha) * (h * h / s2 + d * d / c) * decay(d, sigma, h, alpha)
    }

    /// `u^{1alpha*}(y) = -C (1 + alpha h^2 / (sigma^2 + h^2)) exp(.)`; the score derivative is negative.
    pub fn u_1alpha_star(d: f64, sigma: f64, h: f64, alpha: f64) -> f64 {
        -u_1alpha_star_printed(d, sigma, h, alpha)
    }

    /// The positive-signed variant `C (alpha h^2/(sigma^2+h^2) + 1) exp(.)`.
    pub fn u_1alpha_star_printed(d: f64, sigma: f64, h: f64, alpha: f64) -> f64 {
        c_alpha_h(sigma, h, alpha) * (alpha * h * h / s2(sigma, h) + 1.0) * decay(d, sigma, h, alpha)
    }

    /// `J* = (2 pi)^{-alpha/2} (1+alpha)^{-3/2} (sigma^2+h^2)^{-(alpha+2)/2}`.
    pub fn j_star(sigma: f64, h: f64, alpha: f64) -> f64 {
        (2.0 * PI).powf(-alpha / 2.0) * (1.0 + alpha).powf(-1.5) * s2(sigma, h).powf(-(alpha + 2.0) / 2.0)
    }

    /// The variant `(2 pi)^{alpha/2} (1+alpha)^{3/2} (sigma^2+h^2)^{-(alpha+2)/2}`; equal to [`j_star`] only at `alpha = 0`.
    pub fn j_star_printed(sigma: f64, h: f64, alpha: f64) -> f64 {
        (2.0 * PI).powf(alpha / 2.0) * (1.0 + alpha).powf(1.5) * s2(sigma, h).powf(-(alpha + 2.0) / 2.0)
    }

    /// Sandwich variance of the mean over `sigma^2`.
    pub fn zeta_alpha_h(sigma: f64, h: f64, alpha: f64) -> f64 {
        let (s2, g2, h2) = (sigma * sigma + h * h, sigma * sigma, h * h);
        let num = (1.0 + alpha).powi(2) * s2 * s2;
        let den = ((1.0 + alpha) * h2 + g2) * ((1.0 + alpha) * h2 + (1.0 + 2.0 * alpha) * g2);
        (num / den).powf(1.5)
    }

    /// `h -> 0` limit of [`zeta_alpha_h`]: `(1+alpha)^3 (1+2 alpha)^{-3/2}`.
    pub fn zeta_alpha(alpha: f64) -> f64 {
        (1.0 + alpha).powi(3) * (1.0 + 2.0 * alpha).powf(-1.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::NormalDensity;
    use crate::models::{NormalMeanModel, NormalModel};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }
    fn k(h: f64) -> KernelSpec {
        KernelSpec::gaussian(h).unwrap()
    }

    #[test]
    fn u_alpha_star_examples() {
        let m = NormalMeanModel::new(1.0).unwrap();
        let v = u_alpha_star(&m, &[0.0], k(1.0), 0.0, 1.0, &q()).unwrap();
        assert_relative_eq!(v[0], 0.5, epsilon = 1e-9);
        assert!(u_alpha_star(&m, &[0.0], k(1.0), 0.7, 0.0, &q()).unwrap()[0].abs() < 1e-12);
        for y in [-3.0, -1.0, 0.5, 2.0, 4.0] {
            let n = u_alpha_star(&m, &[0.0], k(0.8), 0.5, y, &q()).unwrap()[0];
            assert!((n - normal_mean::u_alpha_star(y, 1.0, 0.8, 0.5)).abs() < 1e-7);
            let n2 = u_2alpha_star(&m, &[0.0], k(0.8), 0.5, y, &q()).unwrap()[(0, 0)];
            assert!((n2 - normal_mean::u_2alpha_star(y, 1.0, 0.8, 0.5)).abs() < 1e-7);
            let n1 = u_1alpha_star(&m, &[0.0], k(0.8), 0.5, y, &q()).unwrap()[(0, 0)];
            assert!((n1 - normal_mean::u_1alpha_star(y, 1.0, 0.8, 0.5)).abs() < 1e-7);
        }
    }

    #[test]
    fn u_2alpha_star_is_symmetric_and_averages_to_j() {
        let m = NormalModel;
        let th = [0.5, 1.5];
        let u2 = u_2alpha_star(&m, &th, k(0.6), 0.4, 1.3, &q()).unwrap();
        assert_eq!(u2[(0, 1)], u2[(1, 0)]);
        let forms = j_star_forms(&m, &th, k(0.6), 0.4, &q()).unwrap();
        assert!((&forms.single - &forms.expected_outer).amax() < 1e-8);
        // The gradient form agrees in the location entries only: for the scale,
        // E[u^{alpha*}] moves with sigma once alpha > 0. Independent value from
        // -int grad(u~) f*^{1.4} - 0.4 J by scipy quadrature.
        for (i, j) in [(0, 0), (0, 1), (1, 0)] {
            assert!((forms.single[(i, j)] - forms.expected_gradient[(i, j)]).abs() < 1e-6, "{forms:?}");
        }
        assert!((forms.expected_gradient[(1, 1)] - 0.119297899057).abs() < 1e-6);
        let at_zero = j_star_forms(&m, &th, k(0.6), 0.0, &q()).unwrap();
        assert!(at_zero.max_pairwise_gap() < 1e-6, "{at_zero:?}");
    }

    #[test]
    fn j_star_fisher_limit_and_closed_form() {
        let j = j_star_model(&NormalModel, &[0.0, 2.0], KernelSpec::none(), 0.0, &q()).unwrap();
        // The truncated tails carry ~1e-8 of u_mu^2 f and ~1e-7 of u_sigma^2 f.
        assert_relative_eq!(j[(0, 0)], 0.25, max_relative = 1e-7);
        assert_relative_eq!(j[(1, 1)], 0.5, max_relative = 1e-6);
        assert!(j[(0, 1)].abs() < 1e-12);
        let m = NormalMeanModel::new(1.0).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let j = j_star_model(&m, &[0.0], k(1.0), alpha, &q()).unwrap()[(0, 0)];
            assert_relative_eq!(j, normal_mean::j_star(1.0, 1.0, alpha), max_relative = 1e-8);
        }
        // The two closed forms differ once alpha > 0; the integral matches the negative exponent.
        assert!((normal_mean::j_star_printed(1.0, 1.0, 0.5) - normal_mean::j_star(1.0, 1.0, 0.5)).abs() > 0.1);
    }

    #[test]
    fn sandwich_matches_zeta() {
        let m = NormalMeanModel::new(1.0).unwrap();
        for (alpha, h) in [(0.5, 0.5), (0.25, 1.0), (1.0, 0.1)] {
            let s = sandwich_cov(&m, &[0.0], k(h), alpha, &q()).unwrap().sandwich[(0, 0)];
            assert_relative_eq!(s, normal_mean::zeta_alpha_h(1.0, h, alpha), max_relative = 1e-5);
        }
        for h in [0.1, 0.5, 1.0] {
            let s = sandwich_cov(&m, &[0.0], k(h), 0.0, &q()).unwrap().sandwich[(0, 0)];
            assert!((s - 1.0).abs() < 1e-8, "h={h}: {s}");
        }
        let s = sandwich_cov(&m, &[0.0], k(1e-3), 0.5, &q()).unwrap().sandwich[(0, 0)];
        assert!((s - normal_mean::zeta_alpha(0.5)).abs() < 1e-3);
        let u = sandwich_unsmoothed(&m, &[0.0], 0.5, &q()).unwrap().sandwich[(0, 0)];
        assert_relative_eq!(u, normal_mean::zeta_alpha(0.5), max_relative = 1e-8);
    }

    #[test]
    fn v_star_is_psd() {
        let v = v_star_model(&NormalModel, &[0.0, 1.0], k(0.5), 0.5, &q()).unwrap();
        assert_eq!(v[(0, 1)], v[(1, 0)]);
        assert!(v.symmetric_eigenvalues().min() >= -1e-12);
    }

    #[test]
    fn influence_is_lambda_free_and_odd() {
        let grid: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.75).collect();
        let reports: Vec<IFReport> = [-1.0, 0.0, 2.0]
            .iter()
            .map(|&l| {
                influence_function_model(&NormalModel, &[0.0, 1.0], k(0.5), &TuningPair::new(0.5, l).unwrap(), &grid, &q())
                    .unwrap()
            })
            .collect();
        assert_eq!(reports[0].to_csv(), reports[1].to_csv());
        assert_eq!(reports[0], reports[2]);
        let r = &reports[0];
        for i in 0..grid.len() {
            let j = grid.len() - 1 - i;
            assert!((r.if_values[i][0] + r.if_values[j][0]).abs() < 1e-8);
        }
    }

    #[test]
    fn general_if_reduces_to_model_if() {
        let tuning = TuningPair::new(0.5, -0.5).unwrap();
        let grid = [-2.0, 0.0, 1.0, 3.0];
        let g = Arc::new(NormalDensity::new(0.0, 1.0).unwrap());
        let gen = influence_function_general(&NormalModel, g, k(0.5), &tuning, &grid, &q()).unwrap();
        let at = influence_function_model(&NormalModel, &[0.0, 1.0], k(0.5), &tuning, &grid, &q()).unwrap();
        assert!(gen.theta_g[0].abs() < 1e-7 && (gen.theta_g[1] - 1.0).abs() < 1e-7, "{:?}", gen.theta_g);
        for i in 0..grid.len() {
            for j in 0..2 {
                assert!((gen.report.if_values[i][j] - at.if_values[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normal_mean_second_order_constants() {
        let m = NormalMeanModel::new(1.0).unwrap();
        let sm = SmoothedModel::new(&m, &[0.0], k(0.5), q()).unwrap();
        let c = second_order_constants(&sm, 0.5, &q()).unwrap();
        assert!(c.d1.abs() < 1e-8 && c.d2.abs() < 1e-8 && c.mean_u.abs() < 1e-8);
        assert_relative_eq!(c.j, normal_mean::j_star(1.0, 0.5, 0.5), max_relative = 1e-9);
        assert_relative_eq!(c.d0, -1.5 * c.j, max_relative = 1e-9);
    }

    #[test]
    fn second_order_lambda_free_at_alpha_one() {
        let m = NormalMeanModel::new(1.0).unwrap();
        let grid = [-2.0, 1.0, 3.0];
        let a = second_order_if(&m, &[0.0], k(0.5), &TuningPair::new(1.0, -1.0).unwrap(), &grid, &q()).unwrap();
        let b = second_order_if(&m, &[0.0], k(0.5), &TuningPair::new(1.0, 2.0).unwrap(), &grid, &q()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.t2 - y.t2).abs() <= 1e-10);
        }
    }

    #[test]
    fn printed_form_has_a_pole_at_the_centre() {
        let m = NormalMeanModel::new(1.0).unwrap();
        let t = TuningPair::new(0.5, -0.5).unwrap();
        let r = second_order_report(&m, &[0.0], k(0.5), &t, &[0.0, 3.0], SecondOrderForm::Printed, &q()).unwrap();
        let t2 = r.second_order.unwrap();
        assert_eq!(t2[0], None);
        assert!(t2[1].is_some());
        let d = second_order_report(&m, &[0.0], k(0.5), &t, &[0.0, 3.0], SecondOrderForm::Derived, &q()).unwrap();
        assert!(d.second_order.unwrap().iter().all(Option::is_some));
    }

    #[test]
    fn gaussian_kernel_transparency() {
        let grid = default_transparency_grid(&NormalModel, &[0.0, 1.0]);
        let r = transparency_residual(&NormalModel, &[0.0, 1.0], k(0.7), 0.0, &q(), &grid).unwrap();
        assert!(r.transparent, "{}", r.max_residual);
        assert_relative_eq!(r.m[(0, 0)], 1.0 / 1.49, max_relative = 1e-6);
        assert_relative_eq!(r.m[(1, 1)], 1.0 / (1.49 * 1.49), max_relative = 1e-6);
        let m = NormalMeanModel::new(1.0).unwrap();
        let grid = default_transparency_grid(&m, &[0.0]);
        let r = transparency_residual(&m, &[0.0], k(1.0), 0.5, &q(), &grid).unwrap();
        assert!(r.max_residual > 1e-3);
        let r = transparency_residual(&m, &[0.0], k(1e-4), 0.5, &q(), &grid).unwrap();
        assert!(r.max_residual <= 1e-4);
        assert!(transparency_residual(&m, &[0.0], k(1.0), 0.5, &q(), &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(-1.234567891), "-1.23457");
        assert_eq!(fmt_num(26.2121212), "26.2121");
        assert_eq!(fmt_num(1e-9), "1.00000e-9");
        assert_eq!(fmt_num(0.0), "0");
        let r = IFReport {
            param_names: vec!["mu".into()],
            y_grid: vec![1.0, 2.0],
            if_values: vec![vec![0.25], vec![0.5]],
            second_order: Some(vec![Some(1.0), None]),
            at_model: true,
        };
        assert_eq!(r.to_csv(), "y,if_mu,t2\n1,0.25,1\n2,0.5,\n");
    }
}
