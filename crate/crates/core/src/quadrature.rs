//! Shared numerical integration engine.
//!
//! Every integral in the crate goes through [`integrate_vec`]: a globally
//! adaptive 7/15-point Gauss–Kronrod scheme over a finite interval. Integrals
//! over the real line are truncated first; see [`QuadratureSpec::truncation_mass`]
//! and [`normal_tail_quantile`].
//!
//! Vector-valued integrands share nodes, so all components of one call see
//! the same partition. This keeps differences of nearby integrals (the
//! divergence decomposition, estimating equations) free of partition noise.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SdiveError};

/// Tolerances and truncation for integrals over (possibly unbounded) domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Tail mass excluded on each side when truncating an unbounded domain.
    pub truncation_mass: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-8,
            truncation_mass: 1e-10,
            max_subdivisions: 1 << 16,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64, truncation_mass: f64, max_subdivisions: usize) -> Result<Self> {
        let spec = Self { abs_tol, rel_tol, truncation_mass, max_subdivisions };
        spec.validate()?;
        Ok(spec)
    }

    /// Same truncation, tighter (or looser) error targets.
    pub fn with_tolerance(self, abs_tol: f64, rel_tol: f64) -> Self {
        Self { abs_tol, rel_tol, ..self }
    }

    /// Defaults with `abs_tol = tol` and a relative target ten times looser.
    pub fn from_tolerance(tol: f64) -> Result<Self> {
        let d = Self::default();
        let spec = d.with_tolerance(tol, d.rel_tol.max(10.0 * tol).min(0.5));
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.abs_tol) || !in_unit(self.rel_tol) || !in_unit(self.truncation_mass) {
            return Err(SdiveError::InvalidInput(format!(
                "quadrature tolerances must lie in (0, 1): abs_tol={}, rel_tol={}, truncation_mass={}",
                self.abs_tol, self.rel_tol, self.truncation_mass
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(SdiveError::InvalidInput("max_subdivisions must be positive".into()));
        }
        Ok(())
    }

    /// Standard-normal quantile distance excluding `truncation_mass` per tail.
    pub fn normal_tail_z(&self) -> f64 {
        normal_tail_quantile(self.truncation_mass)
    }
}

/// `z` such that P(Z > z) = `mass` for a standard normal Z.
pub fn normal_tail_quantile(mass: f64) -> f64 {
    std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * mass)
}

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a vector integral together with its estimated error.
#[derive(Debug, Clone)]
pub struct Integral {
    pub value: Vec<f64>,
    pub error: f64,
    pub panels: usize,
}

struct Panel {
    lo: f64,
    hi: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: FnMut(f64, &mut [f64])>(
    f: &mut F,
    lo: f64,
    hi: f64,
    dim: usize,
    scratch: &mut [f64],
) -> Panel {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(centre, scratch);
    for k in 0..dim {
        kronrod[k] = WGK[7] * scratch[k];
        gauss[k] = WG[3] * scratch[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        f(centre - dx, scratch);
        let left: Vec<f64> = scratch.to_vec();
        f(centre + dx, scratch);
        for k in 0..dim {
            let pair = left[k] + scratch[k];
            kronrod[k] += WGK[j] * pair;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * pair;
            }
        }
    }
    let mut error = 0.0_f64;
    for k in 0..dim {
        kronrod[k] *= half;
        gauss[k] *= half;
        let e = (kronrod[k] - gauss[k]).abs();
        error = if e.is_nan() { f64::INFINITY } else { error.max(e) };
    }
    Panel { lo, hi, value: kronrod, error }
}

/// Integrates a vector-valued function over `[points[0], points[last]]`,
/// using the interior `points` as initial panel boundaries.
///
/// The integrand writes `dim` components into the provided buffer. Error is
/// controlled in the max-norm over components:
/// `error <= max(abs_tol, rel_tol * max_k |I_k|)`.
pub fn integrate_vec<F>(mut f: F, dim: usize, points: &[f64], spec: &QuadratureSpec) -> Result<Integral>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut breaks: Vec<f64> = points.iter().copied().filter(|p| p.is_finite()).collect();
    if breaks.len() < 2 {
        return Err(SdiveError::InvalidInput("integration needs a finite interval".into()));
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (breaks[0], breaks[breaks.len() - 1]);
    let span = hi - lo;
    if span <= 0.0 {
        return Ok(Integral { value: vec![0.0; dim], error: 0.0, panels: 0 });
    }
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * span);
    // Never start coarser than eight panels.
    const MIN_PANELS: usize = 8;
    if breaks.len() < MIN_PANELS + 1 {
        let step = span / MIN_PANELS as f64;
        breaks.extend((1..MIN_PANELS).map(|i| lo + step * i as f64));
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * span);
    }

    let mut scratch = vec![0.0; dim];
    let mut heap = BinaryHeap::with_capacity(breaks.len() * 2);
    for w in breaks.windows(2) {
        heap.push(gauss_kronrod(&mut f, w[0], w[1], dim, &mut scratch));
    }

    let totals = |heap: &BinaryHeap<Panel>| {
        let mut value = vec![0.0; dim];
        let mut error = 0.0;
        for p in heap.iter() {
            for k in 0..dim {
                value[k] += p.value[k];
            }
            error += p.error;
        }
        (value, error)
    };
    let (mut value, mut error) = totals(&heap);
    let target = |value: &[f64]| {
        let scale = value.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        spec.abs_tol.max(spec.rel_tol * scale)
    };

    let mut since_resum = 0;
    while error > target(&value) {
        if heap.len() >= spec.max_subdivisions {
            let worst = heap.peek().expect("non-empty heap");
            return Err(SdiveError::Quadrature {
                estimate: value.first().copied().unwrap_or(0.0),
                error,
                worst_lo: worst.lo,
                worst_hi: worst.hi,
                worst_error: worst.error,
            });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) || (worst.hi - worst.lo) < 1e-13 * span {
            // Cannot refine further; accept what we have if it is finite.
            heap.push(worst);
            let worst = heap.peek().expect("non-empty heap");
            return Err(SdiveError::Quadrature {
                estimate: value.first().copied().unwrap_or(0.0),
                error,
                worst_lo: worst.lo,
                worst_hi: worst.hi,
                worst_error: worst.error,
            });
        }
        let left = gauss_kronrod(&mut f, worst.lo, mid, dim, &mut scratch);
        let right = gauss_kronrod(&mut f, mid, worst.hi, dim, &mut scratch);
        for k in 0..dim {
            value[k] += left.value[k] + right.value[k] - worst.value[k];
        }
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);

        since_resum += 1;
        if since_resum == 64 {
            (value, error) = totals(&heap);
            since_resum = 0;
        }
    }
    let (value, error) = totals(&heap);
    if value.iter().any(|v| !v.is_finite()) {
        return Err(SdiveError::Domain("integrand produced non-finite values".into()));
    }
    Ok(Integral { value, error, panels: heap.len() })
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, points: &[f64], spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out| out[0] = f(x), 1, points, spec).map(|r| r.value[0])
}

/// Non-adaptive composite Kronrod rule on a fixed partition.
///
/// Used when the same integrand factor (a kernel density estimate, say) is
/// integrated against many different weights: the factor is evaluated once at
/// the nodes and the partition stays fixed, so the integral is a smooth
/// function of whatever parameter varies. Accuracy is the caller's
/// responsibility; pair it with an adaptive check.
#[derive(Debug, Clone)]
pub struct FixedRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl FixedRule {
    /// Splits each gap between sorted `breaks` into equal panels no wider than `max_width`.
    pub fn new(breaks: &[f64], max_width: f64) -> Result<Self> {
        let mut b: Vec<f64> = breaks.iter().copied().filter(|v| v.is_finite()).collect();
        b.sort_by(|x, y| x.total_cmp(y));
        b.dedup();
        if b.len() < 2 || !(max_width > 0.0) {
            return Err(SdiveError::InvalidInput("fixed rule needs an interval and a positive width".into()));
        }
        let (lo, hi) = (b[0], b[b.len() - 1]);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for w in b.windows(2) {
            let pieces = ((w[1] - w[0]) / max_width).ceil().max(1.0) as usize;
            let step = (w[1] - w[0]) / pieces as f64;
            for i in 0..pieces {
                let a = w[0] + step * i as f64;
                let c = a + 0.5 * step;
                let half = 0.5 * step;
                nodes.push(c);
                weights.push(WGK[7] * half);
                for j in 0..7 {
                    nodes.push(c - half * XGK[j]);
                    weights.push(WGK[j] * half);
                    nodes.push(c + half * XGK[j]);
                    weights.push(WGK[j] * half);
                }
            }
        }
        Ok(Self { nodes, weights, lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }
    pub fn hi(&self) -> f64 {
        self.hi
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Breakpoints for `[lo, hi]` plus any hints falling strictly inside.
pub fn breakpoints_within(lo: f64, hi: f64, hints: &[f64]) -> Vec<f64> {
    let mut pts = Vec::with_capacity(hints.len() + 2);
    pts.push(lo);
    pts.extend(hints.iter().copied().filter(|&p| p > lo && p < hi));
    pts.push(hi);
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let spec = QuadratureSpec::default();
        let v = integrate(|x| 3.0 * x * x + 2.0 * x + 1.0, &[0.0, 2.0], &spec).unwrap();
        assert_relative_eq!(v, 8.0 + 4.0 + 2.0, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_mass_over_truncated_line() {
        let spec = QuadratureSpec::default();
        let z = spec.normal_tail_z();
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = integrate(pdf, &[-z, z], &spec).unwrap();
        assert!((v - 1.0).abs() < 3e-10, "mass {v}");
    }

    #[test]
    fn tail_quantile_matches_known_values() {
        assert_relative_eq!(normal_tail_quantile(0.025), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_relative_eq!(normal_tail_quantile(1e-10), 6.361_340_902_404_056, epsilon = 1e-8);
    }

    #[test]
    fn vector_components_share_nodes() {
        let spec = QuadratureSpec::default();
        let r = integrate_vec(
            |x, out| {
                out[0] = x.sin();
                out[1] = x.cos();
            },
            2,
            &[0.0, std::f64::consts::PI],
            &spec,
        )
        .unwrap();
        assert_relative_eq!(r.value[0], 2.0, epsilon = 1e-12);
        assert!(r.value[1].abs() < 1e-12);
    }

    #[test]
    fn narrow_spike_found_through_breakpoint() {
        let spec = QuadratureSpec::default();
        let h = 1e-3;
        let spike = |x: f64| (-0.5 * ((x - 0.3) / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
        let v = integrate(spike, &[-5.0, 0.3, 5.0], &spec).unwrap();
        assert_relative_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn subdivision_budget_is_reported() {
        let spec = QuadratureSpec { max_subdivisions: 10, ..Default::default() };
        let err = integrate(|x| (1.0 / x.abs().max(1e-300)).sqrt().sin() / x.abs().sqrt(), &[-1.0, 1.0], &spec)
            .unwrap_err();
        assert!(matches!(err, SdiveError::Quadrature { .. }));
    }

    #[test]
    fn fixed_rule_matches_adaptive() {
        let rule = FixedRule::new(&[-7.0, 0.0, 7.0], 0.5).unwrap();
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((rule.integrate(pdf) - 1.0).abs() < 1e-11);
        assert_eq!(rule.len(), 28 * 15);
        assert_eq!((rule.lo(), rule.hi()), (-7.0, 7.0));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(QuadratureSpec::new(0.0, 1e-8, 1e-10, 10).is_err());
        assert!(QuadratureSpec::new(1e-9, 1.5, 1e-10, 10).is_err());
        assert!(QuadratureSpec::new(1e-9, 1e-8, 1e-10, 0).is_err());
    }
}
