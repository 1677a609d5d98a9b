//! The S-divergence family, its residual and the K-function.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Result, SdiveError};
use crate::quadrature::{integrate_vec, normal_tail_quantile, QuadratureSpec};

/// Below this magnitude `A` (or `B`) is treated as zero and the log limit is used.
pub const LIMIT_THRESHOLD: f64 = 1e-8;

/// Bounds applied to the density ratio `g/f` by [`residual_delta`].
pub const RATIO_MIN: f64 = 1e-10;
pub const RATIO_MAX: f64 = 1e10;

/// Bound on `|log(g/f)|` inside integrands; only keeps `exp` finite.
pub const LOG_RATIO_MAX: f64 = 690.0;

/// Tuning parameters `(alpha, lambda)` and the exponents they induce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningPair {
    alpha: f64,
    lambda: f64,
    a: f64,
    b: f64,
}

/// Which closed form of the divergence applies to a tuning pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    General,
    /// `A = 0`: the limit weighted by `f^{1+alpha} log(f/g)`.
    ALimit,
    /// `B = 0`: the limit weighted by `g^{1+alpha} log(g/f)`.
    BLimit,
}

impl TuningPair {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !alpha.is_finite() || !lambda.is_finite() {
            return Err(SdiveError::InvalidInput(format!("non-finite tuning ({alpha}, {lambda})")));
        }
        if alpha < 0.0 {
            return Err(SdiveError::InvalidInput(format!("alpha must be nonnegative, got {alpha}")));
        }
        let a = 1.0 + lambda * (1.0 - alpha);
        let b = alpha - lambda * (1.0 - alpha);
        Ok(Self { alpha, lambda, a, b })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn branch(&self) -> Branch {
        if self.a.abs() <= LIMIT_THRESHOLD {
            Branch::ALimit
        } else if self.b.abs() <= LIMIT_THRESHOLD {
            Branch::BLimit
        } else {
            Branch::General
        }
    }
}

/// Density ratio `g/f` clamped to `[RATIO_MIN, RATIO_MAX]`.
///
/// Where both densities vanish the ratio is irrelevant (every term carries a
/// density factor) and 1 is returned.
#[inline]
pub fn clamped_ratio(g_val: f64, f_val: f64) -> f64 {
    if f_val > 0.0 {
        (g_val / f_val).clamp(RATIO_MIN, RATIO_MAX)
    } else if g_val > 0.0 {
        RATIO_MAX
    } else {
        1.0
    }
}

/// Pearson residual `g/f - 1` with the ratio clamped.
pub fn residual_delta(g_val: f64, f_val: f64) -> Result<f64> {
    if !g_val.is_finite() || !f_val.is_finite() {
        return Err(SdiveError::InvalidInput(format!("non-finite density values ({g_val}, {f_val})")));
    }
    if g_val < 0.0 || f_val <= 0.0 {
        return Err(SdiveError::InvalidInput(format!(
            "residual needs g >= 0 and f > 0, got ({g_val}, {f_val})"
        )));
    }
    Ok(clamped_ratio(g_val, f_val) - 1.0)
}

/// `log(g/f)` for use inside integrals, bounded by [`LOG_RATIO_MAX`].
///
/// Unlike [`residual_delta`] this does not clamp to `[1e-10, 1e10]`: a tight
/// clamp breaks both nonnegativity and the link between the divergence and
/// its estimating equation wherever the true ratio leaves that window.
#[inline]
pub fn log_ratio(g_val: f64, f_val: f64) -> f64 {
    if g_val <= 0.0 && f_val <= 0.0 {
        return 0.0;
    }
    (g_val.ln() - f_val.ln()).clamp(-LOG_RATIO_MAX, LOG_RATIO_MAX)
}

/// `(exp(c l) - 1)/c`, continuous at `c = 0` where it equals `l`.
#[inline]
fn expm1_over(c: f64, l: f64) -> f64 {
    if c.abs() <= LIMIT_THRESHOLD {
        l
    } else {
        // exp_m1 keeps digits when c l is small.
        (c * l).exp_m1() / c
    }
}

/// `K` as a function of `log r`.
#[inline]
pub fn k_of_log_ratio(l: f64, a: f64) -> f64 {
    expm1_over(a, l)
}


fn check_delta(delta: f64) -> Result<f64> {
    let r = delta + 1.0;
    if !r.is_finite() || r <= 0.0 {
        return Err(SdiveError::Domain(format!("K is undefined at delta = {delta}")));
    }
    Ok(r)
}

/// `K(delta) = ((delta+1)^A - 1)/A`, or `log(delta+1)` in the `A = 0` limit.
pub fn k_function(delta: f64, tuning: &TuningPair) -> Result<f64> {
    let r = check_delta(delta)?;
    Ok(k_of_log_ratio(r.ln(), tuning.a))
}

/// Derivative of [`k_function`] in `delta`: `(delta+1)^{A-1}`.
pub fn k_prime(delta: f64, tuning: &TuningPair) -> Result<f64> {
    let r = check_delta(delta)?;
    Ok(r.powf(tuning.a - 1.0))
}

/// A univariate density usable on either side of the divergence.
pub trait DensityEvaluator: Send + Sync {
    fn pdf(&self, x: f64) -> f64;

    /// Finite interval outside which at most `mass` lies on each side.
    fn truncation(&self, mass: f64) -> (f64, f64);

    /// Points where the density has local structure (modes, kernel centres).
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Smallest length scale on which the density varies.
    fn feature_scale(&self) -> f64;

    /// Closed-form convolution with a centred gaussian of standard deviation `h`.
    fn convolve_gaussian(&self, _h: f64) -> Option<Arc<dyn DensityEvaluator>> {
        None
    }
}

/// Total mass of a density over its truncation interval.
pub fn total_mass(d: &dyn DensityEvaluator, quad: &QuadratureSpec) -> Result<f64> {
    let (lo, hi) = d.truncation(quad.truncation_mass);
    let mut pts = vec![lo, hi];
    pts.extend(d.breakpoints().into_iter().filter(|&p| p > lo && p < hi));
    integrate_vec(|x, out| out[0] = d.pdf(x), 1, &pts, quad).map(|r| r.value[0])
}

/// `N(mu, sigma^2)` as a [`DensityEvaluator`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalDensity {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalDensity {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SdiveError::InvalidParameter(format!("normal({mu}, {sigma})")));
        }
        Ok(Self { mu, sigma })
    }
}

#[inline]
pub(crate) fn gauss_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

impl DensityEvaluator for NormalDensity {
    fn pdf(&self, x: f64) -> f64 {
        gauss_pdf(x, self.mu, self.sigma)
    }
    fn truncation(&self, mass: f64) -> (f64, f64) {
        let z = normal_tail_quantile(mass);
        (self.mu - z * self.sigma, self.mu + z * self.sigma)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.mu]
    }
    fn feature_scale(&self) -> f64 {
        self.sigma
    }
    fn convolve_gaussian(&self, h: f64) -> Option<Arc<dyn DensityEvaluator>> {
        Some(Arc::new(NormalDensity { mu: self.mu, sigma: self.sigma.hypot(h) }))
    }
}

/// Finite mixture `sum_i w_i d_i` with positive weights summing to one.
#[derive(Clone)]
pub struct Mixture {
    parts: Vec<(f64, Arc<dyn DensityEvaluator>)>,
}

impl std::fmt::Debug for Mixture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let weights: Vec<f64> = self.parts.iter().map(|p| p.0).collect();
        f.debug_struct("Mixture").field("weights", &weights).finish()
    }
}

impl Mixture {
    pub fn new(parts: Vec<(f64, Arc<dyn DensityEvaluator>)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(SdiveError::InvalidInput("mixture needs at least one component".into()));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if parts.iter().any(|p| !(p.0 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(SdiveError::InvalidInput(format!("mixture weights must be >= 0 and sum to 1 (sum {total})")));
        }
        Ok(Self { parts: parts.into_iter().filter(|p| p.0 > 0.0).collect() })
    }

    /// `(1 - eps) * base + eps * other`.
    pub fn contaminate(base: Arc<dyn DensityEvaluator>, other: Arc<dyn DensityEvaluator>, eps: f64) -> Result<Self> {
        Self::new(vec![(1.0 - eps, base), (eps, other)])
    }
}

impl DensityEvaluator for Mixture {
    fn pdf(&self, x: f64) -> f64 {
        self.parts.iter().map(|(w, d)| w * d.pdf(x)).sum()
    }
    fn truncation(&self, mass: f64) -> (f64, f64) {
        self.parts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, d)| {
            let (a, b) = d.truncation(mass);
            (lo.min(a), hi.max(b))
        })
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.parts.iter().flat_map(|(_, d)| d.breakpoints()).collect()
    }
    fn feature_scale(&self) -> f64 {
        self.parts.iter().map(|(_, d)| d.feature_scale()).fold(f64::INFINITY, f64::min)
    }
    fn convolve_gaussian(&self, h: f64) -> Option<Arc<dyn DensityEvaluator>> {
        let parts = self
            .parts
            .iter()
            .map(|(w, d)| d.convolve_gaussian(h).map(|c| (*w, c)))
            .collect::<Option<Vec<_>>>()?;
        Some(Arc::new(Mixture { parts }))
    }
}

/// Pointwise integrands of the three-integral decomposition.
///
/// The meaning of each slot depends on the branch; [`combine_terms`] turns the
/// integrated triple into the divergence value.
#[inline]
pub fn divergence_integrand(g_val: f64, f_val: f64, tuning: &TuningPair) -> [f64; 3] {
    let p = 1.0 + tuning.alpha;
    let fp = f_val.powf(p);
    let gp = g_val.powf(p);
    let l = log_ratio(g_val, f_val);
    match tuning.branch() {
        Branch::General => [fp, (p * f_val.ln() + tuning.a * l).exp(), gp],
        Branch::ALimit => [-fp * l, fp, gp],
        Branch::BLimit => [gp * l, fp, gp],
    }
}

/// Pointwise divergence density `f^{1+alpha} phi(g/f)`, with
/// `phi(r) = r^A (r^B - 1)/B - (r^A - 1)/A`.
///
/// This is the integrand of [`combine_terms`] rearranged so that no
/// division by a small `A` or `B` cancels large terms; it is nonnegative for
/// every ratio and continuous through both limit branches.
#[inline]
pub fn pointwise_divergence(g_val: f64, f_val: f64, tuning: &TuningPair) -> f64 {
    let p = 1.0 + tuning.alpha;
    if f_val <= 0.0 {
        // Only the g^{1+alpha}/B term survives.
        return match g_val > 0.0 {
            false => 0.0,
            true if tuning.b > 0.0 => g_val.powf(p) / tuning.b,
            true => f64::INFINITY,
        };
    }
    let l = log_ratio(g_val, f_val);
    let lfp = p * f_val.ln();
    let fp = lfp.exp();
    let t1 = (lfp + tuning.a * l).exp();
    let v = t1 * expm1_over(tuning.b, l) - fp * expm1_over(tuning.a, l);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v.max(0.0)
    }
}

/// Divergence value from the integrated triple of [`divergence_integrand`].
#[inline]
pub fn combine_terms(t: &[f64], tuning: &TuningPair) -> f64 {
    let p = 1.0 + tuning.alpha;
    let (a, b) = (tuning.a, tuning.b);
    match tuning.branch() {
        Branch::General => t[0] / a - p / (a * b) * t[1] + t[2] / b,
        Branch::ALimit => t[0] - (t[1] - t[2]) / p,
        Branch::BLimit => t[0] - (t[2] - t[1]) / p,
    }
}

/// Divergence value together with its three integrals.
///
/// `value` integrates [`pointwise_divergence`]; where no ratio bound is hit it
/// equals [`combine_terms`] applied to `integrals`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceValue {
    pub value: f64,
    pub integrals: [f64; 3],
    pub branch: Branch,
}

/// Common truncated domain of two densities plus their breakpoints.
pub fn joint_domain(g: &dyn DensityEvaluator, f: &dyn DensityEvaluator, mass: f64) -> Vec<f64> {
    let (gl, gh) = g.truncation(mass);
    let (fl, fh) = f.truncation(mass);
    let (lo, hi) = (gl.min(fl), gh.max(fh));
    let mut pts = vec![lo, hi];
    pts.extend(g.breakpoints().into_iter().chain(f.breakpoints()).filter(|&p| p > lo && p < hi));
    pts
}

/// `S_(alpha, lambda)(g, f)` by quadrature over the union of both truncation intervals.
pub fn s_divergence(
    g: &dyn DensityEvaluator,
    f: &dyn DensityEvaluator,
    tuning: &TuningPair,
    quad: &QuadratureSpec,
) -> Result<DivergenceValue> {
    quad.validate()?;
    let pts = joint_domain(g, f, quad.truncation_mass);
    let res = integrate_vec(
        |x, out| {
            let (gv, fv) = (g.pdf(x), f.pdf(x));
            out[..3].copy_from_slice(&divergence_integrand(gv, fv, tuning));
            out[3] = pointwise_divergence(gv, fv, tuning);
        },
        4,
        &pts,
        quad,
    )?;
    let integrals = [res.value[0], res.value[1], res.value[2]];
    Ok(DivergenceValue { value: res.value[3], integrals, branch: tuning.branch() })
}
