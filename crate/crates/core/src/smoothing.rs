//! Kernel smoothing of data, models and general densities, and bandwidth rules.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::divergence::{gauss_pdf, DensityEvaluator};
use crate::error::{Result, SdiveError};
use crate::models::ParametricModel;
use crate::quadrature::{integrate_vec, normal_tail_quantile, QuadratureSpec};

/// Half-width, in bandwidths, of the window used for numeric convolution.
pub const CONVOLUTION_WINDOW: f64 = 8.0;

/// Consistency constant turning the MAD into a normal standard deviation.
pub const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

/// Kernel `W(x, y, h) = w((x - y)/h)/h`.
///
/// `h = 0` is accepted as the degenerate kernel (no smoothing). Data
/// smoothing rejects it; model smoothing treats it as the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !bandwidth.is_finite() || bandwidth < 0.0 {
            return Err(SdiveError::InvalidInput(format!("bandwidth must be finite and >= 0, got {bandwidth}")));
        }
        Ok(Self { family: KernelFamily::Gaussian, bandwidth })
    }

    /// The identity kernel.
    pub fn none() -> Self {
        Self { family: KernelFamily::Gaussian, bandwidth: 0.0 }
    }

    pub fn is_degenerate(&self) -> bool {
        self.bandwidth == 0.0
    }

    #[inline]
    pub fn weight(&self, x: f64, y: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => gauss_pdf(x, y, self.bandwidth),
        }
    }

    /// `sup W(x, y, h)`, finite for every positive bandwidth.
    pub fn sup_weight(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => 1.0 / (self.bandwidth * (2.0 * PI).sqrt()),
        }
    }
}

/// Median with the two central order statistics averaged for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(median, MAD / 0.6745)`.
pub fn robust_location_scale(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(SdiveError::InvalidInput("empty sample".into()));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(SdiveError::InvalidInput("sample contains non-finite values".into()));
    }
    let m = median(sample);
    let dev: Vec<f64> = sample.iter().map(|x| (x - m).abs()).collect();
    let mad = median(&dev);
    if mad <= 0.0 {
        return Err(SdiveError::DegenerateSample("median absolute deviation is zero".into()));
    }
    Ok((m, mad / MAD_SCALE))
}

/// `1.06 * sigma0 * n^(-1/5)` with `sigma0` the scaled MAD.
pub fn normal_reference_bandwidth(sample: &[f64]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(SdiveError::InvalidInput("bandwidth rule needs at least two observations".into()));
    }
    let (_, s0) = robust_location_scale(sample)?;
    Ok(1.06 * s0 * (sample.len() as f64).powf(-0.2))
}

/// `h0 * sigma0`, the bandwidth of the stability experiment.
pub fn relative_bandwidth(sample: &[f64], h0: f64) -> Result<f64> {
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(SdiveError::InvalidInput(format!("relative bandwidth factor must be positive, got {h0}")));
    }
    Ok(h0 * robust_location_scale(sample)?.1)
}

/// Kernel density estimate `g*_n(x) = (1/n) sum_i W(x, X_i, h)`.
#[derive(Debug, Clone)]
pub struct SmoothedData {
    sample: Vec<f64>,
    kernel: KernelSpec,
}

pub fn smooth_data(sample: &[f64], kernel: KernelSpec) -> Result<SmoothedData> {
    if sample.is_empty() {
        return Err(SdiveError::InvalidInput("cannot smooth an empty sample".into()));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(SdiveError::InvalidInput("sample contains non-finite values".into()));
    }
    if kernel.is_degenerate() {
        return Err(SdiveError::InvalidInput("data smoothing needs a positive bandwidth".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(SmoothedData { sample: sorted, kernel })
}

impl SmoothedData {
    pub fn sample(&self) -> &[f64] {
        &self.sample
    }
    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }
    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth
    }
}

impl DensityEvaluator for SmoothedData {
    fn pdf(&self, x: f64) -> f64 {
        let h = self.kernel.bandwidth;
        let inv = 1.0 / h;
        let s: f64 = self
            .sample
            .iter()
            .map(|&xi| {
                let z = (x - xi) * inv;
                (-0.5 * z * z).exp()
            })
            .sum();
        s / (self.sample.len() as f64 * h * (2.0 * PI).sqrt())
    }
    fn truncation(&self, mass: f64) -> (f64, f64) {
        let z = normal_tail_quantile(mass) * self.kernel.bandwidth;
        (self.sample[0] - z, self.sample[self.sample.len() - 1] + z)
    }
    fn breakpoints(&self) -> Vec<f64> {
        // Sample points thinned to spacing of at least one bandwidth.
        let h = self.kernel.bandwidth;
        let mut out: Vec<f64> = Vec::new();
        for &x in &self.sample {
            if out.last().is_none_or(|&l| x - l >= h) {
                out.push(x);
            }
        }
        out
    }
    fn feature_scale(&self) -> f64 {
        self.kernel.bandwidth
    }
    fn convolve_gaussian(&self, h: f64) -> Option<Arc<dyn DensityEvaluator>> {
        Some(Arc::new(SmoothedData {
            sample: self.sample.clone(),
            kernel: KernelSpec { family: self.kernel.family, bandwidth: self.kernel.bandwidth.hypot(h) },
        }))
    }
}

/// `int W(x, y, h) base(y) dy` by quadrature over the kernel window.
pub fn numeric_convolution(
    base: &dyn DensityEvaluator,
    kernel: &KernelSpec,
    x: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let h = kernel.bandwidth;
    if h == 0.0 {
        return Ok(base.pdf(x));
    }
    let (blo, bhi) = base.truncation(quad.truncation_mass);
    let lo = (x - CONVOLUTION_WINDOW * h).max(blo);
    let hi = (x + CONVOLUTION_WINDOW * h).min(bhi);
    if lo >= hi {
        return Ok(0.0);
    }
    let mut pts = vec![lo, hi];
    pts.extend(base.breakpoints().into_iter().chain([x]).filter(|&p| p > lo && p < hi));
    integrate_vec(|y, out| out[0] = kernel.weight(x, y) * base.pdf(y), 1, &pts, quad).map(|r| r.value[0])
}

/// A density convolved with a kernel, analytically when possible.
#[derive(Clone)]
pub struct SmoothedDensity {
    base: Arc<dyn DensityEvaluator>,
    kernel: KernelSpec,
    closed: Option<Arc<dyn DensityEvaluator>>,
    quad: QuadratureSpec,
}

impl std::fmt::Debug for SmoothedDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothedDensity")
            .field("kernel", &self.kernel)
            .field("closed_form", &self.closed.is_some())
            .finish()
    }
}

impl SmoothedDensity {
    pub fn new(base: Arc<dyn DensityEvaluator>, kernel: KernelSpec, quad: QuadratureSpec) -> Self {
        let closed = if kernel.is_degenerate() {
            Some(base.clone())
        } else {
            match kernel.family {
                KernelFamily::Gaussian => base.convolve_gaussian(kernel.bandwidth),
            }
        };
        Self { base, kernel, closed, quad }
    }

    /// Forces the quadrature path even when a closed form exists.
    pub fn numeric(base: Arc<dyn DensityEvaluator>, kernel: KernelSpec, quad: QuadratureSpec) -> Self {
        Self { base, kernel, closed: None, quad }
    }

    pub fn is_closed_form(&self) -> bool {
        self.closed.is_some()
    }

    pub fn numeric_pdf(&self, x: f64) -> Result<f64> {
        numeric_convolution(self.base.as_ref(), &self.kernel, x, &self.quad)
    }
}

impl DensityEvaluator for SmoothedDensity {
    fn pdf(&self, x: f64) -> f64 {
        match &self.closed {
            Some(c) => c.pdf(x),
            None => self.numeric_pdf(x).unwrap_or(f64::NAN),
        }
    }
    fn truncation(&self, mass: f64) -> (f64, f64) {
        if let Some(c) = &self.closed {
            return c.truncation(mass);
        }
        let (lo, hi) = self.base.truncation(mass);
        let w = normal_tail_quantile(mass) * self.kernel.bandwidth;
        (lo - w, hi + w)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.base.breakpoints()
    }
    fn feature_scale(&self) -> f64 {
        self.base.feature_scale().hypot(self.kernel.bandwidth)
    }
    fn convolve_gaussian(&self, h: f64) -> Option<Arc<dyn DensityEvaluator>> {
        let c = self.closed.as_ref()?.convolve_gaussian(h)?;
        Some(c)
    }
}

/// `f*_theta`, the model at `theta` convolved with the kernel.
pub fn smooth_model(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    quad: QuadratureSpec,
) -> Result<SmoothedDensity> {
    model.check(theta)?;
    Ok(SmoothedDensity::new(model.as_density(theta)?, kernel, quad))
}

/// Evaluator for `f*_theta`, its score and score Hessian at a fixed `theta`.
///
/// Uses the model's closed forms when it has them and falls back to numeric
/// convolution with central differences otherwise.
pub struct SmoothedModel<'a> {
    model: &'a dyn ParametricModel,
    theta: Vec<f64>,
    kernel: KernelSpec,
    quad: QuadratureSpec,
    closed: bool,
}

impl<'a> SmoothedModel<'a> {
    pub fn new(model: &'a dyn ParametricModel, theta: &[f64], kernel: KernelSpec, quad: QuadratureSpec) -> Result<Self> {
        model.check(theta)?;
        let p = model.dim();
        let mut probe = vec![0.0; p * p];
        let closed = kernel.is_degenerate()
            || (model.smoothed_pdf(theta, kernel.bandwidth, 0.0).is_some()
                && model.smoothed_score_into(theta, kernel.bandwidth, 0.0, &mut probe[..p])
                && model.smoothed_hessian_into(theta, kernel.bandwidth, 0.0, &mut probe));
        Ok(Self { model, theta: theta.to_vec(), kernel, quad, closed })
    }

    /// Same model and kernel, forced onto the numeric path.
    pub fn numeric(model: &'a dyn ParametricModel, theta: &[f64], kernel: KernelSpec, quad: QuadratureSpec) -> Result<Self> {
        model.check(theta)?;
        Ok(Self { model, theta: theta.to_vec(), kernel, quad, closed: false })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
    pub fn dim(&self) -> usize {
        self.model.dim()
    }
    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth
    }

    pub fn truncation(&self, mass: f64) -> (f64, f64) {
        let (lo, hi) = self.model.truncation(&self.theta, mass);
        let w = normal_tail_quantile(mass) * self.kernel.bandwidth;
        (lo - w, hi + w)
    }

    fn numeric_pdf_at(&self, theta: &[f64], x: f64) -> f64 {
        if self.kernel.is_degenerate() {
            return self.model.density(theta, x);
        }
        match self.model.as_density(theta) {
            Ok(base) => numeric_convolution(base.as_ref(), &self.kernel, x, &self.quad).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        if self.kernel.is_degenerate() {
            return self.model.density(&self.theta, x);
        }
        if self.closed {
            if let Some(v) = self.model.smoothed_pdf(&self.theta, self.kernel.bandwidth, x) {
                return v;
            }
        }
        self.numeric_pdf_at(&self.theta, x)
    }

    fn step(&self, j: usize, rel: f64) -> f64 {
        rel.max(rel * self.theta[j].abs())
    }

    #[inline]
    pub fn score_into(&self, x: f64, out: &mut [f64]) {
        if self.kernel.is_degenerate() {
            self.model.score_into(&self.theta, x, out);
            return;
        }
        if self.closed && self.model.smoothed_score_into(&self.theta, self.kernel.bandwidth, x, out) {
            return;
        }
        let mut th = self.theta.clone();
        for j in 0..self.theta.len() {
            let s = self.step(j, 1e-6);
            th[j] = self.theta[j] + s;
            let up = self.numeric_pdf_at(&th, x).ln();
            th[j] = self.theta[j] - s;
            let dn = self.numeric_pdf_at(&th, x).ln();
            th[j] = self.theta[j];
            out[j] = (up - dn) / (2.0 * s);
        }
    }

    /// Row-major `p x p` matrix of second derivatives of `log f*_theta(x)`.
    pub fn hessian_into(&self, x: f64, out: &mut [f64]) {
        if self.kernel.is_degenerate() {
            self.model.score_hessian_into(&self.theta, x, out);
            return;
        }
        if self.closed && self.model.smoothed_hessian_into(&self.theta, self.kernel.bandwidth, x, out) {
            return;
        }
        let p = self.theta.len();
        let logf = |th: &[f64]| self.numeric_pdf_at(th, x).ln();
        let base = logf(&self.theta);
        let mut th = self.theta.clone();
        for j in 0..p {
            let sj = self.step(j, 1e-4);
            th[j] = self.theta[j] + sj;
            let up = logf(&th);
            th[j] = self.theta[j] - sj;
            let dn = logf(&th);
            th[j] = self.theta[j];
            out[j * p + j] = (up - 2.0 * base + dn) / (sj * sj);
            for k in 0..j {
                let sk = self.step(k, 1e-4);
                let mut eval = |dj: f64, dk: f64| {
                    th[j] = self.theta[j] + dj;
                    th[k] = self.theta[k] + dk;
                    let v = logf(&th);
                    th[j] = self.theta[j];
                    th[k] = self.theta[k];
                    v
                };
                let v = (eval(sj, sk) - eval(sj, -sk) - eval(-sj, sk) + eval(-sj, -sk)) / (4.0 * sj * sk);
                out[j * p + k] = v;
                out[k * p + j] = v;
            }
        }
    }
}

/// `u~_theta(x)`, the gradient of `log f*_theta(x)`.
pub fn smoothed_score(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    x: f64,
    quad: QuadratureSpec,
) -> Result<Vec<f64>> {
    let sm = SmoothedModel::new(model, theta, kernel, quad)?;
    if !(sm.pdf(x) > 0.0) {
        return Err(SdiveError::Domain(format!("smoothed density underflows at x = {x}")));
    }
    let mut out = vec![0.0; model.dim()];
    sm.score_into(x, &mut out);
    Ok(out)
}

/// Matrix of second derivatives of `log f*_theta(x)`; its negation is `i~_theta(x)`.
pub fn smoothed_score_hessian(
    model: &dyn ParametricModel,
    theta: &[f64],
    kernel: KernelSpec,
    x: f64,
    quad: QuadratureSpec,
) -> Result<nalgebra::DMatrix<f64>> {
    let sm = SmoothedModel::new(model, theta, kernel, quad)?;
    if !(sm.pdf(x) > 0.0) {
        return Err(SdiveError::Domain(format!("smoothed density underflows at x = {x}")));
    }
    let p = model.dim();
    let mut out = vec![0.0; p * p];
    sm.hessian_into(x, &mut out);
    Ok(nalgebra::DMatrix::from_row_slice(p, p, &out))
}
