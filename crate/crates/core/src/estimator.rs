//! MSDE\* (data and model smoothed), Beran-type MSDE (data smoothed only) and
//! MDPDE (no smoothing) fits.
//!
//! All three minimise a divergence with a simplex search in unconstrained
//! coordinates, then polish with damped Newton on the estimating equation
//! using a central-difference Jacobian. The reported equation norm is always
//! recomputed with the adaptive engine, independently of the fixed-node cache
//! used during the search.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::u_alpha_star_with;
use crate::divergence::{
    joint_domain, k_of_log_ratio, log_ratio, pointwise_divergence, DensityEvaluator, TuningPair,
};
use crate::error::{Result, SdiveError};
use crate::models::ParametricModel;
use crate::quadrature::{integrate_vec, FixedRule, QuadratureSpec};
use crate::smoothing::{
    normal_reference_bandwidth, relative_bandwidth, smooth_data, KernelSpec, SmoothedModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Data and model both smoothed with the same kernel.
    MsdeStar,
    /// Data smoothed, model left as is.
    MsdeBeran,
    /// Density power divergence on the empirical distribution; needs `lambda = 0`.
    Mdpde,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::MsdeStar => "msde-star",
            Method::MsdeBeran => "msde-beran",
            Method::Mdpde => "mdpde",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SdiveError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "msde-star" => Ok(Method::MsdeStar),
            "msde-beran" => Ok(Method::MsdeBeran),
            "mdpde" => Ok(Method::Mdpde),
            other => Err(SdiveError::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    RobustMedianMad,
    Mle,
    Explicit(Vec<f64>),
}

/// How the kernel bandwidth is chosen from a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `1.06 sigma0 n^(-1/5)`.
    NormalReference,
    Fixed(f64),
    /// `h0 * sigma0`.
    Relative(f64),
}

impl BandwidthRule {
    pub fn resolve(&self, sample: &[f64]) -> Result<f64> {
        match *self {
            BandwidthRule::NormalReference => normal_reference_bandwidth(sample),
            BandwidthRule::Fixed(h) => {
                if h > 0.0 && h.is_finite() {
                    Ok(h)
                } else {
                    Err(SdiveError::InvalidInput(format!("fixed bandwidth must be positive, got {h}")))
                }
            }
            BandwidthRule::Relative(h0) => relative_bandwidth(sample, h0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub method: Method,
    pub tuning: TuningPair,
    /// Required for the smoothed methods, ignored by MDPDE.
    pub bandwidth: Option<BandwidthRule>,
    pub quad: QuadratureSpec,
    pub init: Init,
    pub max_iter: usize,
    pub param_tol: f64,
    pub grad_tol: f64,
}

impl FitConfig {
    pub fn new(method: Method, tuning: TuningPair) -> Self {
        let bandwidth = match method {
            Method::Mdpde => None,
            _ => Some(BandwidthRule::NormalReference),
        };
        Self {
            method,
            tuning,
            bandwidth,
            quad: QuadratureSpec::default(),
            init: Init::RobustMedianMad,
            max_iter: 100,
            param_tol: 1e-8,
            grad_tol: 1e-6,
        }
    }

    pub fn with_bandwidth(mut self, rule: BandwidthRule) -> Self {
        self.bandwidth = Some(rule);
        self
    }
    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
    pub fn with_quad(mut self, quad: QuadratureSpec) -> Self {
        self.quad = quad;
        self
    }
    pub fn with_tolerances(mut self, param_tol: f64, grad_tol: f64) -> Self {
        self.param_tol = param_tol;
        self.grad_tol = grad_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.quad.validate()?;
        match self.method {
            Method::Mdpde if self.tuning.lambda() != 0.0 => {
                return Err(SdiveError::InvalidInput("mdpde requires lambda = 0".into()));
            }
            Method::MsdeStar | Method::MsdeBeran if self.bandwidth.is_none() => {
                return Err(SdiveError::InvalidInput(format!("{} requires a bandwidth", self.method.as_str())));
            }
            _ => {}
        }
        if self.max_iter == 0 || !(self.param_tol > 0.0) || !(self.grad_tol > 0.0) {
            return Err(SdiveError::InvalidInput("iteration limits and tolerances must be positive".into()));
        }
        Ok(())
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions { max_iter: self.max_iter, param_tol: self.param_tol, grad_tol: self.grad_tol, simplex: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    /// Divergence at `theta_hat`. For MDPDE only the `theta`-dependent part.
    pub objective: f64,
    pub estimating_eq_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Size of the last Newton step (max-norm).
    pub last_step: f64,
    pub asymptotic_cov: Option<DMatrix<f64>>,
    pub bandwidth_used: Option<f64>,
}

/// Controls for the simplex-then-Newton solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub param_tol: f64,
    pub grad_tol: f64,
    /// Run the simplex search before Newton; skip it when starting at a known root's neighbourhood.
    pub simplex: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 100, param_tol: 1e-8, grad_tol: 1e-6, simplex: true }
    }
}

/// An objective with an associated estimating equation (its scaled gradient).
trait Problem {
    fn model(&self) -> &dyn ParametricModel;
    fn objective(&mut self, theta: &[f64]) -> Result<f64>;
    fn equation(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()>;
    /// Independent, error-controlled evaluation of the equation.
    fn verified_equation(&mut self, theta: &[f64]) -> Result<Vec<f64>>;
    /// Tighten any cached discretisation; false when nothing is left to refine.
    fn refine(&mut self) -> Result<bool> {
        Ok(false)
    }
}

// ---------------------------------------------------------------------------
// Divergence problems: S(g, f*_theta) for an arbitrary density g.

struct DivergenceProblem<'a> {
    g: &'a dyn DensityEvaluator,
    model: &'a dyn ParametricModel,
    kernel: KernelSpec,
    tuning: TuningPair,
    quad: QuadratureSpec,
    breaks: Vec<f64>,
    width: f64,
    rule: FixedRule,
    gvals: Vec<f64>,
}

impl<'a> DivergenceProblem<'a> {
    fn new(
        g: &'a dyn DensityEvaluator,
        model: &'a dyn ParametricModel,
        kernel: KernelSpec,
        tuning: TuningPair,
        quad: QuadratureSpec,
        theta0: &[f64],
    ) -> Result<Self> {
        model.check(theta0)?;
        let sm = SmoothedModel::new(model, theta0, kernel, quad)?;
        let (gl, gh) = g.truncation(quad.truncation_mass);
        let (fl, fh) = sm.truncation(quad.truncation_mass);
        let (lo, hi) = (gl.min(fl), gh.max(fh));
        let mut breaks = vec![lo, hi];
        breaks.extend(g.breakpoints().into_iter().filter(|&p| p > lo && p < hi));
        let model_scale = model.spread(theta0).hypot(kernel.bandwidth);
        let width = 0.5 * g.feature_scale().min(model_scale);
        let rule = FixedRule::new(&breaks, width)?;
        let gvals = rule.nodes.iter().map(|&x| g.pdf(x)).collect();
        Ok(Self { g, model, kernel, tuning, quad, breaks, width, rule, gvals })
    }

    fn smoothed(&self, theta: &[f64]) -> Result<SmoothedModel<'a>> {
        SmoothedModel::new(self.model, theta, self.kernel, self.quad)
    }

    // Parts of the model's truncation interval outside the cached grid.
    fn overhang(&self, sm: &SmoothedModel<'_>) -> Vec<(f64, f64)> {
        let (fl, fh) = sm.truncation(self.quad.truncation_mass);
        let mut out = Vec::new();
        if fl < self.rule.lo() {
            out.push((fl, self.rule.lo()));
        }
        if fh > self.rule.hi() {
            out.push((self.rule.hi(), fh));
        }
        out
    }

    fn equation_integrand(&self, sm: &SmoothedModel<'_>, x: f64, g: f64, u: &mut [f64], out: &mut [f64]) {
        let f = sm.pdf(x);
        if !(f > 0.0) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let w = k_of_log_ratio(log_ratio(g, f), self.tuning.a()) * f.powf(1.0 + self.tuning.alpha());
        sm.score_into(x, u);
        for (o, ui) in out.iter_mut().zip(u.iter()) {
            *o = w * ui;
        }
    }
}

impl Problem for DivergenceProblem<'_> {
    fn model(&self) -> &dyn ParametricModel {
        self.model
    }

    fn objective(&mut self, theta: &[f64]) -> Result<f64> {
        let sm = self.smoothed(theta)?;
        let mut total = 0.0;
        for ((&x, &w), &g) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.gvals) {
            total += w * pointwise_divergence(g, sm.pdf(x), &self.tuning);
        }
        for (a, b) in self.overhang(&sm) {
            total += integrate_vec(
                |x, out| out[0] = pointwise_divergence(self.g.pdf(x), sm.pdf(x), &self.tuning),
                1,
                &[a, b],
                &self.quad,
            )?
            .value[0];
        }
        Ok(total)
    }

    fn equation(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        let sm = self.smoothed(theta)?;
        let p = theta.len();
        let mut u = vec![0.0; p];
        let mut v = vec![0.0; p];
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((&x, &w), &g) in self.rule.nodes.iter().zip(&self.rule.weights).zip(&self.gvals) {
            self.equation_integrand(&sm, x, g, &mut u, &mut v);
            for j in 0..p {
                out[j] += w * v[j];
            }
        }
        for (a, b) in self.overhang(&sm) {
            let r = integrate_vec(
                |x, o| {
                    let mut uu = vec![0.0; p];
                    self.equation_integrand(&sm, x, self.g.pdf(x), &mut uu, o)
                },
                p,
                &[a, b],
                &self.quad,
            )?;
            for j in 0..p {
                out[j] += r.value[j];
            }
        }
        Ok(())
    }

    fn verified_equation(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        let sm = self.smoothed(theta)?;
        let p = theta.len();
        let (fl, fh) = sm.truncation(self.quad.truncation_mass);
        let mut pts = joint_domain(self.g, self.g, self.quad.truncation_mass);
        pts.push(fl);
        pts.push(fh);
        pts.push(theta[0]);
        let mut u = vec![0.0; p];
        integrate_vec(|x, o| self.equation_integrand(&sm, x, self.g.pdf(x), &mut u, o), p, &pts, &self.quad)
            .map(|r| r.value)
    }

    fn refine(&mut self) -> Result<bool> {
        if self.rule.len() > 2_000_000 {
            return Ok(false);
        }
        self.width *= 0.5;
        self.rule = FixedRule::new(&self.breaks, self.width)?;
        self.gvals = self.rule.nodes.iter().map(|&x| self.g.pdf(x)).collect();
        Ok(true)
    }
}

// ---------------------------------------------------------------------------
// Density power divergence on the empirical distribution.

struct MdpdeProblem<'a> {
    sample: &'a [f64],
    model: &'a dyn ParametricModel,
    alpha: f64,
    quad: QuadratureSpec,
}

impl MdpdeProblem<'_> {
    fn model_integral(&self, theta: &[f64]) -> Result<Vec<f64>> {
        // [int f^{1+alpha}, int f^{1+alpha} u]
        let p = theta.len();
        let (lo, hi) = self.model.truncation(theta, self.quad.truncation_mass);
        let mut u = vec![0.0; p];
        integrate_vec(
            |x, o| {
                let f = self.model.density(theta, x);
                let fp = f.powf(1.0 + self.alpha);
                self.model.score_into(theta, x, &mut u);
                o[0] = fp;
                for j in 0..p {
                    o[j + 1] = fp * u[j];
                }
            },
            p + 1,
            &[lo, theta[0], hi],
            &self.quad,
        )
        .map(|r| r.value)
    }
}

impl Problem for MdpdeProblem<'_> {
    fn model(&self) -> &dyn ParametricModel {
        self.model
    }

    fn objective(&mut self, theta: &[f64]) -> Result<f64> {
        self.model.check(theta)?;
        let a = self.alpha;
        let n = self.sample.len() as f64;
        let mi = self.model_integral(theta)?;
        let emp: f64 = self.sample.iter().map(|&x| self.model.density(theta, x).powf(a)).sum::<f64>() / n;
        Ok(mi[0] - (1.0 + 1.0 / a) * emp)
    }

    fn equation(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.model.check(theta)?;
        let p = theta.len();
        let n = self.sample.len() as f64;
        let mi = self.model_integral(theta)?;
        let mut u = vec![0.0; p];
        out.iter_mut().for_each(|o| *o = 0.0);
        for &x in self.sample {
            let w = self.model.density(theta, x).powf(self.alpha);
            self.model.score_into(theta, x, &mut u);
            for j in 0..p {
                out[j] += w * u[j] / n;
            }
        }
        for j in 0..p {
            out[j] -= mi[j + 1];
        }
        Ok(())
    }

    fn verified_equation(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; theta.len()];
        self.equation(theta, &mut out)?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Solver.

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Nelder-Mead on `f`, in coordinates scaled by `steps`.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], steps: &[f64], max_evals: usize, xtol: f64) -> (Vec<f64>, f64, usize) {
    let p = x0.len();
    let to_x = |z: &[f64]| -> Vec<f64> { z.iter().zip(x0).zip(steps).map(|((zi, xi), si)| xi + si * zi).collect() };
    let mut simplex: Vec<Vec<f64>> = vec![vec![0.0; p]];
    for j in 0..p {
        let mut z = vec![0.0; p];
        z[j] = 1.0;
        simplex.push(z);
    }
    let mut values: Vec<f64> = simplex.iter().map(|z| f(&to_x(z))).collect();
    let mut evals = p + 1;
    let mut iters = 0;
    loop {
        let mut order: Vec<usize> = (0..=p).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let size = simplex[1..]
            .iter()
            .map(|z| z.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if size <= xtol || evals >= max_evals {
            break;
        }
        iters += 1;
        let centroid: Vec<f64> = (0..p).map(|j| simplex[..p].iter().map(|z| z[j]).sum::<f64>() / p as f64).collect();
        let worst = simplex[p].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(1.0);
        let fr = f(&to_x(&xr));
        evals += 1;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = f(&to_x(&xe));
            evals += 1;
            if fe < fr {
                simplex[p] = xe;
                values[p] = fe;
            } else {
                simplex[p] = xr;
                values[p] = fr;
            }
        } else if fr < values[p - 1] {
            simplex[p] = xr;
            values[p] = fr;
        } else {
            let (xc, fc) = if fr < values[p] {
                let xc = along(0.5);
                let fc = f(&to_x(&xc));
                (xc, fc)
            } else {
                let xc = along(-0.5);
                let fc = f(&to_x(&xc));
                (xc, fc)
            };
            evals += 1;
            if fc < values[p].min(fr) {
                simplex[p] = xc;
                values[p] = fc;
            } else {
                for i in 1..=p {
                    let z: Vec<f64> = simplex[i].iter().zip(&simplex[0]).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    values[i] = f(&to_x(&z));
                    simplex[i] = z;
                }
                evals += p;
            }
        }
    }
    (to_x(&simplex[0]), values[0], iters)
}

fn fd_jacobian(problem: &mut dyn Problem, theta: &[f64]) -> Result<DMatrix<f64>> {
    let p = theta.len();
    let spread = problem.model().spread(theta);
    let mut jac = DMatrix::zeros(p, p);
    let mut up = vec![0.0; p];
    let mut dn = vec![0.0; p];
    let mut th = theta.to_vec();
    for j in 0..p {
        let s = 1e-5 * theta[j].abs().max(spread);
        th[j] = theta[j] + s;
        problem.equation(&th, &mut up)?;
        th[j] = theta[j] - s;
        problem.equation(&th, &mut dn)?;
        th[j] = theta[j];
        for i in 0..p {
            jac[(i, j)] = (up[i] - dn[i]) / (2.0 * s);
        }
    }
    Ok(jac)
}

struct NewtonOutcome {
    theta: Vec<f64>,
    iterations: usize,
    last_step: f64,
    converged: bool,
}

fn newton(problem: &mut dyn Problem, start: &[f64], opts: &SolverOptions) -> Result<NewtonOutcome> {
    let p = start.len();
    let mut theta = start.to_vec();
    let mut e = vec![0.0; p];
    problem.equation(&theta, &mut e)?;
    let mut e_norm = norm(&e);
    let mut last_step = f64::INFINITY;
    let mut trial_e = vec![0.0; p];
    for it in 1..=opts.max_iter {
        let jac = fd_jacobian(problem, &theta)?;
        let Some(delta) = jac.lu().solve(&DVector::from_column_slice(&e)) else {
            return Ok(NewtonOutcome { theta, iterations: it, last_step, converged: false });
        };
        let full_step = delta.amax();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(th, d)| th - t * d).collect();
            let eta = problem.model().to_unconstrained(&trial);
            if problem.model().check(&trial).is_ok() && !problem.model().is_degenerate(&eta) {
                if problem.equation(&trial, &mut trial_e).is_ok() {
                    let tn = norm(&trial_e);
                    if tn.is_finite() && (tn <= (1.0 - 1e-4 * t) * e_norm || tn == 0.0) {
                        theta = trial;
                        e.copy_from_slice(&trial_e);
                        e_norm = tn;
                        last_step = t * full_step;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // At the rounding floor of the equation no step can reduce it further.
            let converged = full_step <= opts.param_tol && e_norm <= opts.grad_tol;
            if converged {
                last_step = full_step;
            }
            return Ok(NewtonOutcome { theta, iterations: it, last_step, converged });
        }
        if last_step <= opts.param_tol && e_norm <= opts.grad_tol {
            return Ok(NewtonOutcome { theta, iterations: it, last_step, converged: true });
        }
    }
    Ok(NewtonOutcome { theta, iterations: opts.max_iter, last_step, converged: false })
}

fn solve(problem: &mut dyn Problem, start: &[f64], opts: &SolverOptions) -> Result<FitResult> {
    let model = problem.model();
    model.check(start)?;
    let p = model.dim();
    let mut iterations = 0;
    let mut theta = start.to_vec();
    if opts.simplex {
        let eta0 = model.to_unconstrained(start);
        let spread = model.spread(start);
        // Location-type coordinates move in units of the spread, log-scales in units of 0.2.
        let steps: Vec<f64> = (0..p).map(|j| if j == 0 { 0.3 * spread } else { 0.2 }).collect();
        let (eta, _, it) = {
            let mut obj = |eta: &[f64]| -> f64 {
                let m = problem.model();
                if m.is_degenerate(eta) {
                    return f64::INFINITY;
                }
                let th = m.from_unconstrained(eta);
                match problem.objective(&th) {
                    Ok(v) if v.is_finite() => v,
                    _ => f64::INFINITY,
                }
            };
            nelder_mead(&mut obj, &eta0, &steps, 400 * p, 1e-4)
        };
        iterations += it;
        if problem.model().is_degenerate(&eta) {
            return Err(SdiveError::DegenerateFit(format!("scale collapsed during search (log-scale {:.3e})", eta[p - 1])));
        }
        theta = problem.model().from_unconstrained(&eta);
    }
    let mut outcome = newton(problem, &theta, opts)?;
    iterations += outcome.iterations;
    let mut verified = problem.verified_equation(&outcome.theta)?;
    // A cached grid that is too coarse shows up as a gap between the two evaluations.
    for _ in 0..3 {
        if norm(&verified) <= opts.grad_tol || !problem.refine()? {
            break;
        }
        outcome = newton(problem, &outcome.theta, opts)?;
        iterations += outcome.iterations;
        verified = problem.verified_equation(&outcome.theta)?;
    }
    let eq_norm = norm(&verified);
    let eta = problem.model().to_unconstrained(&outcome.theta);
    if problem.model().is_degenerate(&eta) {
        return Err(SdiveError::DegenerateFit("scale collapsed".into()));
    }
    let objective = problem.objective(&outcome.theta)?;
    Ok(FitResult {
        converged: outcome.converged && eq_norm <= opts.grad_tol,
        theta_hat: outcome.theta,
        objective,
        estimating_eq_norm: eq_norm,
        iterations,
        last_step: outcome.last_step,
        asymptotic_cov: None,
        bandwidth_used: None,
    })
}

// ---------------------------------------------------------------------------
// Public entry points.

/// Minimises `S(g, f*_theta)` over `theta` for an arbitrary density `g`.
///
/// `model_kernel` smooths the model; pass [`KernelSpec::none`] to leave it
/// unsmoothed. This is the statistical functional behind every fit.
pub fn fit_functional(
    g: &dyn DensityEvaluator,
    model: &dyn ParametricModel,
    model_kernel: KernelSpec,
    tuning: TuningPair,
    quad: QuadratureSpec,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<FitResult> {
    let mut problem = DivergenceProblem::new(g, model, model_kernel, tuning, quad, start)?;
    solve(&mut problem, start, opts)
}

fn start_value(sample: &[f64], model: &dyn ParametricModel, init: &Init) -> Result<Vec<f64>> {
    match init {
        Init::RobustMedianMad => model.robust_start(sample),
        Init::Mle => model.mle(sample),
        Init::Explicit(t) => {
            model.check(t)?;
            Ok(t.clone())
        }
    }
}

fn fit_smoothed(sample: &[f64], model: &dyn ParametricModel, config: &FitConfig, smooth_model: bool) -> Result<FitResult> {
    config.validate()?;
    let rule = config.bandwidth.expect("validated");
    let h = rule.resolve(sample)?;
    let data_kernel = KernelSpec::gaussian(h)?;
    let g = smooth_data(sample, data_kernel)?;
    let start = start_value(sample, model, &config.init)?;
    let model_kernel = if smooth_model { data_kernel } else { KernelSpec::none() };
    let mut fit = fit_functional(&g, model, model_kernel, config.tuning, config.quad, &start, &config.solver())?;
    fit.bandwidth_used = Some(h);
    Ok(fit)
}

/// Minimum S\*-divergence estimate: both `g*_n` and `f*_theta` smoothed.
pub fn fit_msde_star(sample: &[f64], model: &dyn ParametricModel, config: &FitConfig) -> Result<FitResult> {
    if config.method != Method::MsdeStar {
        return Err(SdiveError::InvalidInput("config method is not msde-star".into()));
    }
    fit_smoothed(sample, model, config, true)
}

/// Minimum S-divergence estimate against the smoothed data with an unsmoothed model.
pub fn fit_msde_beran(sample: &[f64], model: &dyn ParametricModel, config: &FitConfig) -> Result<FitResult> {
    if config.method != Method::MsdeBeran {
        return Err(SdiveError::InvalidInput("config method is not msde-beran".into()));
    }
    fit_smoothed(sample, model, config, false)
}

/// Minimum density power divergence estimate; `alpha = 0` is the MLE.
pub fn fit_mdpde(sample: &[f64], model: &dyn ParametricModel, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if config.method != Method::Mdpde {
        return Err(SdiveError::InvalidInput("config method is not mdpde".into()));
    }
    if sample.is_empty() {
        return Err(SdiveError::InvalidInput("empty sample".into()));
    }
    let alpha = config.tuning.alpha();
    let mut problem = MdpdeProblem { sample, model, alpha, quad: config.quad };
    if alpha == 0.0 {
        let theta = model.mle(sample)?;
        let eq = problem.verified_equation(&theta)?;
        let n = sample.len() as f64;
        let loglik: f64 = sample.iter().map(|&x| model.density(&theta, x).ln()).sum::<f64>() / n;
        let eq_norm = norm(&eq);
        return Ok(FitResult {
            theta_hat: theta,
            objective: -loglik,
            estimating_eq_norm: eq_norm,
            iterations: 0,
            converged: eq_norm <= config.grad_tol,
            last_step: 0.0,
            asymptotic_cov: None,
            bandwidth_used: None,
        });
    }
    let start = start_value(sample, model, &config.init)?;
    solve(&mut problem, &start, &config.solver())
}

/// Dispatches on `config.method`.
pub fn fit(sample: &[f64], model: &dyn ParametricModel, config: &FitConfig) -> Result<FitResult> {
    match config.method {
        Method::MsdeStar => fit_msde_star(sample, model, config),
        Method::MsdeBeran => fit_msde_beran(sample, model, config),
        Method::Mdpde => fit_mdpde(sample, model, config),
    }
}

/// Fits from several starting points.
#[derive(Debug, Clone)]
pub struct MultiStart {
    pub best: FitResult,
    pub candidates: Vec<FitResult>,
    /// True when converged candidates disagree in objective by more than `1e-8`.
    pub roots_differ: bool,
}

/// Runs the fit from each start; the smallest divergence among converged fits wins.
pub fn multistart(sample: &[f64], model: &dyn ParametricModel, config: &FitConfig, starts: &[Init]) -> Result<MultiStart> {
    if starts.is_empty() {
        return Err(SdiveError::InvalidInput("no starting points".into()));
    }
    let mut candidates = Vec::new();
    let mut last_err = None;
    for s in starts {
        match fit(sample, model, &config.clone().with_init(s.clone())) {
            Ok(r) => candidates.push(r),
            Err(e) => last_err = Some(e),
        }
    }
    if candidates.is_empty() {
        return Err(last_err.expect("at least one start"));
    }
    let pool: Vec<&FitResult> = if candidates.iter().any(|c| c.converged) {
        candidates.iter().filter(|c| c.converged).collect()
    } else {
        candidates.iter().collect()
    };
    let best = (*pool.iter().min_by(|a, b| a.objective.total_cmp(&b.objective)).expect("non-empty")).clone();
    let (lo, hi) = pool.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c.objective), h.max(c.objective)));
    Ok(MultiStart { best, roots_differ: hi - lo > 1e-8, candidates })
}

// ---------------------------------------------------------------------------
// MDPDE versus MDPDE*.

struct MdpdeStarProblem<'a> {
    inner: DivergenceProblem<'a>,
    sample: &'a [f64],
    kernel: KernelSpec,
    alpha: f64,
}

impl MdpdeStarProblem<'_> {
    fn eq15(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let model = self.inner.model;
        let quad = self.inner.quad;
        let sm = SmoothedModel::new(model, theta, self.kernel, quad)?;
        let p = theta.len();
        let n = self.sample.len() as f64;
        let mut out = vec![0.0; p];
        for &x in self.sample {
            let u = u_alpha_star_with(&sm, self.alpha, x, &quad)?;
            for j in 0..p {
                out[j] += u[j] / n;
            }
        }
        // E_theta[u^{alpha*}] = int u~ (f*)^{1+alpha}.
        let (lo, hi) = sm.truncation(quad.truncation_mass);
        let mut u = vec![0.0; p];
        let e = integrate_vec(
            |x, o| {
                let f = sm.pdf(x);
                sm.score_into(x, &mut u);
                let w = f.powf(1.0 + self.alpha);
                for j in 0..p {
                    o[j] = w * u[j];
                }
            },
            p,
            &[lo, theta[0], hi],
            &quad,
        )?;
        for j in 0..p {
            out[j] -= e.value[j];
        }
        Ok(out)
    }
}

impl Problem for MdpdeStarProblem<'_> {
    fn model(&self) -> &dyn ParametricModel {
        self.inner.model
    }
    fn objective(&mut self, theta: &[f64]) -> Result<f64> {
        self.inner.objective(theta)
    }
    fn equation(&mut self, theta: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.eq15(theta)?);
        Ok(())
    }
    fn verified_equation(&mut self, theta: &[f64]) -> Result<Vec<f64>> {
        self.eq15(theta)
    }
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub mdpde: FitResult,
    pub mdpde_star: FitResult,
    /// Max-norm distance between the two estimates.
    pub gap: f64,
}

/// Solves the unsmoothed MDPDE equation and the smoothed MDPDE\* equation
/// (written through `u^{alpha*}`) on the same sample and reports their gap.
pub fn mdpde_star_equivalence_check(
    sample: &[f64],
    model: &dyn ParametricModel,
    kernel: KernelSpec,
    alpha: f64,
    quad: QuadratureSpec,
) -> Result<EquivalenceReport> {
    let tuning = TuningPair::new(alpha, 0.0)?;
    let mdpde = fit_mdpde(sample, model, &FitConfig::new(Method::Mdpde, tuning).with_quad(quad))?;
    let g = smooth_data(sample, kernel)?;
    let start = mdpde.theta_hat.clone();
    let inner = DivergenceProblem::new(&g, model, kernel, tuning, quad, &start)?;
    let mut problem = MdpdeStarProblem { inner, sample, kernel, alpha };
    let mut star = solve(&mut problem, &start, &SolverOptions::default())?;
    star.bandwidth_used = Some(kernel.bandwidth);
    let gap = mdpde.theta_hat.iter().zip(&star.theta_hat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(EquivalenceReport { mdpde, mdpde_star: star, gap })
}

/// Equation of the smoothed functional at `theta`, by adaptive quadrature.
///
/// This is the left side of the MSDE\* (or, with an unsmoothed model kernel,
/// Beran-type) estimating equation with `g` in place of `g*_n`.
pub fn estimating_equation(
    g: &dyn DensityEvaluator,
    model: &dyn ParametricModel,
    model_kernel: KernelSpec,
    tuning: TuningPair,
    quad: QuadratureSpec,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let mut problem = DivergenceProblem::new(g, model, model_kernel, tuning, quad, theta)?;
    problem.verified_equation(theta)
}

/// Left side of the MDPDE equation at `theta`.
pub fn mdpde_equation(sample: &[f64], model: &dyn ParametricModel, alpha: f64, quad: QuadratureSpec, theta: &[f64]) -> Result<Vec<f64>> {
    let mut problem = MdpdeProblem { sample, model, alpha, quad };
    problem.verified_equation(theta)
}
