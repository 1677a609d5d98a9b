//! Parametric model families, distribution specs and contaminated sampling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Normal, StudentT};

use crate::divergence::{gauss_pdf, DensityEvaluator, NormalDensity};
use crate::error::{Result, SdiveError};
use crate::quadrature::normal_tail_quantile;
use crate::smoothing::{median, robust_location_scale};

/// Below this, `ln sigma` is treated as a collapsed fit.
pub const LOG_SCALE_FLOOR: f64 = -30.0;

/// A continuous parametric family `f_theta` on the real line.
///
/// Matrices are passed as row-major slices of length `dim * dim`.
pub trait ParametricModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn param_names(&self) -> &'static [&'static str];

    /// Rejects parameters outside the parameter space.
    fn check(&self, theta: &[f64]) -> Result<()>;

    fn density(&self, theta: &[f64], x: f64) -> f64;
    fn score_into(&self, theta: &[f64], x: f64, out: &mut [f64]);
    fn score_hessian_into(&self, theta: &[f64], x: f64, out: &mut [f64]);

    fn sample(&self, theta: &[f64], n: usize, seed: u64) -> Result<Vec<f64>>;

    /// Interval holding all but `mass` of `f_theta` on each side.
    fn truncation(&self, theta: &[f64], mass: f64) -> (f64, f64);

    /// Typical spread of `f_theta`, used for step sizes and simplex scales.
    fn spread(&self, theta: &[f64]) -> f64;

    fn as_density(&self, theta: &[f64]) -> Result<Arc<dyn DensityEvaluator>>;

    /// Map to coordinates where the parameter space is all of R^p.
    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64>;
    fn from_unconstrained(&self, eta: &[f64]) -> Vec<f64>;

    /// True when unconstrained coordinates describe a collapsed model.
    fn is_degenerate(&self, _eta: &[f64]) -> bool {
        false
    }

    /// Median/MAD style starting value.
    fn robust_start(&self, sample: &[f64]) -> Result<Vec<f64>>;
    fn mle(&self, sample: &[f64]) -> Result<Vec<f64>>;
    /// Parameter whose model matches the given mean and standard deviation as closely as possible.
    fn from_moments(&self, mean: f64, sd: f64) -> Vec<f64>;

    /// Closed-form density of the model convolved with a gaussian kernel of width `h`.
    fn smoothed_pdf(&self, _theta: &[f64], _h: f64, _x: f64) -> Option<f64> {
        None
    }
    /// Closed-form gradient of the smoothed log density; returns false if unavailable.
    fn smoothed_score_into(&self, _theta: &[f64], _h: f64, _x: f64, _out: &mut [f64]) -> bool {
        false
    }
    fn smoothed_hessian_into(&self, _theta: &[f64], _h: f64, _x: f64, _out: &mut [f64]) -> bool {
        false
    }
}

fn check_sigma(mu: f64, sigma: f64) -> Result<()> {
    if !mu.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
        return Err(SdiveError::InvalidParameter(format!("normal parameters mu={mu}, sigma={sigma}")));
    }
    Ok(())
}

pub fn normal_density(mu: f64, sigma: f64, x: f64) -> Result<f64> {
    check_sigma(mu, sigma)?;
    Ok(gauss_pdf(x, mu, sigma))
}

/// Score of `N(mu, sigma^2)` in `(mu, sigma)`.
pub fn normal_score(mu: f64, sigma: f64, x: f64) -> Result<[f64; 2]> {
    check_sigma(mu, sigma)?;
    let d = x - mu;
    Ok([d / (sigma * sigma), d * d / sigma.powi(3) - 1.0 / sigma])
}

// Score and Hessian in (mu, sigma) of N(mu, sigma^2 + h^2).
#[inline]
fn smoothed_normal_score(mu: f64, sigma: f64, h: f64, x: f64, out: &mut [f64]) {
    let s2 = sigma * sigma + h * h;
    let d = x - mu;
    out[0] = d / s2;
    out[1] = sigma * (d * d - s2) / (s2 * s2);
}

#[inline]
fn smoothed_normal_hessian(mu: f64, sigma: f64, h: f64, x: f64, out: &mut [f64]) {
    let s2 = sigma * sigma + h * h;
    let s4 = s2 * s2;
    let d = x - mu;
    let e = d * d - s2;
    let sg2 = sigma * sigma;
    out[0] = -1.0 / s2;
    out[1] = -2.0 * sigma * d / s4;
    out[2] = out[1];
    out[3] = e / s4 - 2.0 * sg2 / s4 - 4.0 * sg2 * e / (s4 * s2);
}

fn normal_draws(mu: f64, sigma: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_sigma(mu, sigma)?;
    let dist = Normal::new(mu, sigma).map_err(|e| SdiveError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

fn mean_sd(sample: &[f64]) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return Err(SdiveError::InvalidInput("empty sample".into()));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(SdiveError::DegenerateSample("sample has zero variance".into()));
    }
    Ok((mean, var.sqrt()))
}

/// Normal location-scale model, `theta = (mu, sigma)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalModel;

impl ParametricModel for NormalModel {
    fn name(&self) -> &'static str {
        "normal"
    }
    fn dim(&self) -> usize {
        2
    }
    fn param_names(&self) -> &'static [&'static str] {
        &["mu", "sigma"]
    }
    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 2 {
            return Err(SdiveError::InvalidParameter(format!("normal model expects 2 parameters, got {}", theta.len())));
        }
        check_sigma(theta[0], theta[1])
    }
    fn density(&self, theta: &[f64], x: f64) -> f64 {
        gauss_pdf(x, theta[0], theta[1])
    }
    fn score_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        smoothed_normal_score(theta[0], theta[1], 0.0, x, out);
    }
    fn score_hessian_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        smoothed_normal_hessian(theta[0], theta[1], 0.0, x, out);
    }
    fn sample(&self, theta: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
        normal_draws(theta[0], theta[1], n, seed)
    }
    fn truncation(&self, theta: &[f64], mass: f64) -> (f64, f64) {
        let z = normal_tail_quantile(mass);
        (theta[0] - z * theta[1], theta[0] + z * theta[1])
    }
    fn spread(&self, theta: &[f64]) -> f64 {
        theta[1]
    }
    fn as_density(&self, theta: &[f64]) -> Result<Arc<dyn DensityEvaluator>> {
        Ok(Arc::new(NormalDensity::new(theta[0], theta[1])?))
    }
    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[0], theta[1].ln()]
    }
    fn from_unconstrained(&self, eta: &[f64]) -> Vec<f64> {
        vec![eta[0], eta[1].exp()]
    }
    fn is_degenerate(&self, eta: &[f64]) -> bool {
        eta[1] < LOG_SCALE_FLOOR
    }
    fn robust_start(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let (m, s) = robust_location_scale(sample)?;
        Ok(vec![m, s])
    }
    fn mle(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let (m, s) = mean_sd(sample)?;
        Ok(vec![m, s])
    }
    fn from_moments(&self, mean: f64, sd: f64) -> Vec<f64> {
        vec![mean, sd]
    }
    fn smoothed_pdf(&self, theta: &[f64], h: f64, x: f64) -> Option<f64> {
        Some(gauss_pdf(x, theta[0], theta[1].hypot(h)))
    }
    fn smoothed_score_into(&self, theta: &[f64], h: f64, x: f64, out: &mut [f64]) -> bool {
        smoothed_normal_score(theta[0], theta[1], h, x, out);
        true
    }
    fn smoothed_hessian_into(&self, theta: &[f64], h: f64, x: f64, out: &mut [f64]) -> bool {
        smoothed_normal_hessian(theta[0], theta[1], h, x, out);
        true
    }
}

/// Normal model with known standard deviation, `theta = (mu)`.
#[derive(Debug, Clone, Copy)]
pub struct NormalMeanModel {
    sigma: f64,
}

impl NormalMeanModel {
    pub fn new(sigma: f64) -> Result<Self> {
        check_sigma(0.0, sigma)?;
        Ok(Self { sigma })
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl ParametricModel for NormalMeanModel {
    fn name(&self) -> &'static str {
        "normal-mean"
    }
    fn dim(&self) -> usize {
        1
    }
    fn param_names(&self) -> &'static [&'static str] {
        &["mu"]
    }
    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != 1 || !theta[0].is_finite() {
            return Err(SdiveError::InvalidParameter(format!("normal-mean model expects one finite parameter, got {theta:?}")));
        }
        Ok(())
    }
    fn density(&self, theta: &[f64], x: f64) -> f64 {
        gauss_pdf(x, theta[0], self.sigma)
    }
    fn score_into(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        out[0] = (x - theta[0]) / (self.sigma * self.sigma);
    }
    fn score_hessian_into(&self, _theta: &[f64], _x: f64, out: &mut [f64]) {
        out[0] = -1.0 / (self.sigma * self.sigma);
    }
    fn sample(&self, theta: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
        normal_draws(theta[0], self.sigma, n, seed)
    }
    fn truncation(&self, theta: &[f64], mass: f64) -> (f64, f64) {
        let z = normal_tail_quantile(mass);
        (theta[0] - z * self.sigma, theta[0] + z * self.sigma)
    }
    fn spread(&self, _theta: &[f64]) -> f64 {
        self.sigma
    }
    fn as_density(&self, theta: &[f64]) -> Result<Arc<dyn DensityEvaluator>> {
        Ok(Arc::new(NormalDensity::new(theta[0], self.sigma)?))
    }
    fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }
    fn from_unconstrained(&self, eta: &[f64]) -> Vec<f64> {
        eta.to_vec()
    }
    fn robust_start(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.is_empty() {
            return Err(SdiveError::InvalidInput("empty sample".into()));
        }
        Ok(vec![median(sample)])
    }
    fn mle(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.is_empty() {
            return Err(SdiveError::InvalidInput("empty sample".into()));
        }
        Ok(vec![sample.iter().sum::<f64>() / sample.len() as f64])
    }
    fn from_moments(&self, mean: f64, _sd: f64) -> Vec<f64> {
        vec![mean]
    }
    fn smoothed_pdf(&self, theta: &[f64], h: f64, x: f64) -> Option<f64> {
        Some(gauss_pdf(x, theta[0], self.sigma.hypot(h)))
    }
    fn smoothed_score_into(&self, theta: &[f64], h: f64, x: f64, out: &mut [f64]) -> bool {
        out[0] = (x - theta[0]) / (self.sigma * self.sigma + h * h);
        true
    }
    fn smoothed_hessian_into(&self, _theta: &[f64], h: f64, _x: f64, out: &mut [f64]) -> bool {
        out[0] = -1.0 / (self.sigma * self.sigma + h * h);
        true
    }
}

/// How the second argument of `normal(mu, .)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleReading {
    #[default]
    StandardDeviation,
    Variance,
}

/// A sampling distribution: `normal(mu,sigma)`, `t(df)` or `chisq(df)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistSpec {
    Normal { mu: f64, sigma: f64 },
    StudentT { df: f64 },
    ChiSquared { df: f64 },
}

impl DistSpec {
    /// Parses a spec, reading the normal scale argument per `reading`.
    pub fn parse_with(text: &str, reading: ScaleReading) -> Result<Self> {
        let bad = || SdiveError::InvalidInput(format!("unknown distribution spec '{text}'"));
        let t = text.trim();
        let open = t.find('(').ok_or_else(bad)?;
        if !t.ends_with(')') {
            return Err(bad());
        }
        let name = t[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = t[open + 1..t.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let spec = match (name.as_str(), args.as_slice()) {
            ("normal", &[mu, scale]) => {
                let sigma = match reading {
                    ScaleReading::StandardDeviation => scale,
                    ScaleReading::Variance => scale.sqrt(),
                };
                DistSpec::Normal { mu, sigma }
            }
            ("t", &[df]) => DistSpec::StudentT { df },
            ("chisq", &[df]) => DistSpec::ChiSquared { df },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistSpec::Normal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma > 0.0,
            DistSpec::StudentT { df } | DistSpec::ChiSquared { df } => df.is_finite() && df > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SdiveError::InvalidInput(format!("invalid distribution parameters in {self}")))
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Parameters were validated at construction.
        match *self {
            DistSpec::Normal { mu, sigma } => Normal::new(mu, sigma).expect("valid normal").sample(rng),
            DistSpec::StudentT { df } => StudentT::new(df).expect("valid t").sample(rng),
            DistSpec::ChiSquared { df } => ChiSquared::new(df).expect("valid chisq").sample(rng),
        }
    }

    /// `(mu, sigma)` for a normal distribution.
    pub fn normal_params(&self) -> Option<(f64, f64)> {
        match *self {
            DistSpec::Normal { mu, sigma } => Some((mu, sigma)),
            _ => None,
        }
    }
}

impl FromStr for DistSpec {
    type Err = SdiveError;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with(s, ScaleReading::StandardDeviation)
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Normal { mu, sigma } => write!(f, "normal({mu},{sigma})"),
            DistSpec::StudentT { df } => write!(f, "t({df})"),
            DistSpec::ChiSquared { df } => write!(f, "chisq({df})"),
        }
    }
}

/// Draws `n` observations, each from `contaminant` with probability `epsilon`.
///
/// With `epsilon = 0` or no contaminant the stream is exactly the
/// uncontaminated one, so reports do not depend on the unused spec.
pub fn sample_contaminated(
    target: &DistSpec,
    contaminant: Option<&DistSpec>,
    epsilon: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    target.validate()?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(SdiveError::InvalidInput(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    if n == 0 {
        return Err(SdiveError::InvalidInput("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match contaminant {
        Some(c) if epsilon > 0.0 => {
            c.validate()?;
            Ok((0..n)
                .map(|_| if rng.random::<f64>() < epsilon { c.draw(&mut rng) } else { target.draw(&mut rng) })
                .collect())
        }
        _ => Ok((0..n).map(|_| target.draw(&mut rng)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn density_and_score_examples() {
        assert_relative_eq!(normal_density(0.0, 1.0, 0.0).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert_relative_eq!(normal_density(0.0, 3.0, 0.0).unwrap(), 0.132_980_760_133_810_9, epsilon = 1e-15);
        assert_relative_eq!(normal_density(1.0, 1.0, 1.0).unwrap(), 0.398_942_280_401_432_7, epsilon = 1e-15);
        assert!(normal_density(0.0, 0.0, 1.0).is_err());
        assert_eq!(normal_score(0.0, 1.0, 0.0).unwrap(), [0.0, -1.0]);
        assert_eq!(normal_score(0.0, 1.0, 1.0).unwrap(), [1.0, 0.0]);
        assert_eq!(normal_score(0.0, 2.0, 2.0).unwrap(), [0.5, 0.0]);
        assert!(normal_score(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn dist_spec_round_trip() {
        for s in ["normal(0,3)", "t(5)", "chisq(3)", "normal(15,3)"] {
            let d: DistSpec = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        let v = DistSpec::parse_with("normal(0, 9)", ScaleReading::Variance).unwrap();
        assert_eq!(v, DistSpec::Normal { mu: 0.0, sigma: 3.0 });
        assert!("cauchy(0,1)".parse::<DistSpec>().is_err());
        assert!("normal(0)".parse::<DistSpec>().is_err());
        assert!("normal(0,-1)".parse::<DistSpec>().is_err());
        assert!("t(5".parse::<DistSpec>().is_err());
    }

    #[test]
    fn contamination_is_deterministic_and_short_circuits() {
        let t: DistSpec = "normal(0,1)".parse().unwrap();
        let c: DistSpec = "normal(15,1)".parse().unwrap();
        let a = sample_contaminated(&t, Some(&c), 0.1, 200, 7).unwrap();
        let b = sample_contaminated(&t, Some(&c), 0.1, 200, 7).unwrap();
        assert_eq!(a, b);
        let clean = sample_contaminated(&t, None, 0.0, 50, 3).unwrap();
        let with_c = sample_contaminated(&t, Some(&c), 0.0, 50, 3).unwrap();
        assert_eq!(clean, with_c);
        assert!(sample_contaminated(&t, Some(&c), 1.0, 5, 1).is_err());
    }

    #[test]
    fn near_total_contamination_moves_the_mean() {
        let t: DistSpec = "normal(0,1)".parse().unwrap();
        let c: DistSpec = "normal(15,1)".parse().unwrap();
        let x = sample_contaminated(&t, Some(&c), 1.0 - 1e-12, 10_000, 11).unwrap();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        assert!((m - 15.0).abs() < 0.05, "mean {m}");
    }

    #[test]
    fn sampler_moments() {
        let x = NormalModel.sample(&[0.0, 3.0], 100_000, 2024).unwrap();
        let (m, s) = mean_sd(&x).unwrap();
        assert!(m.abs() < 0.05 && (s - 3.0).abs() < 0.05, "({m}, {s})");
    }

    #[test]
    fn mle_uses_n_divisor() {
        let th = NormalModel.mle(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(th[0], 2.5);
        assert_relative_eq!(th[1], 1.25f64.sqrt(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn score_and_hessian_match_finite_differences(
            mu in -3.0f64..3.0, sigma in 0.3f64..4.0, x in -8.0f64..8.0, h in 0.0f64..1.5,
        ) {
            let m = NormalModel;
            let logf = |th: &[f64]| m.smoothed_pdf(th, h, x).unwrap().ln();
            let mut score = [0.0; 2];
            m.smoothed_score_into(&[mu, sigma], h, x, &mut score);
            let mut hess = [0.0; 4];
            m.smoothed_hessian_into(&[mu, sigma], h, x, &mut hess);
            let step = 1e-5;
            for j in 0..2 {
                let mut up = [mu, sigma];
                let mut dn = [mu, sigma];
                up[j] += step;
                dn[j] -= step;
                let fd = (logf(&up) - logf(&dn)) / (2.0 * step);
                prop_assert!((fd - score[j]).abs() <= 1e-5 * (1.0 + score[j].abs()), "score {} {} {}", j, fd, score[j]);
                let mut su = [0.0; 2];
                let mut sd = [0.0; 2];
                m.smoothed_score_into(&up, h, x, &mut su);
                m.smoothed_score_into(&dn, h, x, &mut sd);
                for k in 0..2 {
                    let fd2 = (su[k] - sd[k]) / (2.0 * step);
                    prop_assert!((fd2 - hess[k * 2 + j]).abs() <= 1e-5 * (1.0 + fd2.abs()));
                }
            }
        }
    }
}
