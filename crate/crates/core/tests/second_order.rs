//! Second-order influence function against repeated refits along the
//! contamination path `G_eps = (1 - eps) F_theta + eps delta_y`.

use std::sync::Arc;

use sdive::diagnostics::{second_order_if, second_order_if_printed};
use sdive::divergence::{DensityEvaluator, Mixture, NormalDensity, TuningPair};
use sdive::estimator::{fit_functional, SolverOptions};
use sdive::models::NormalMeanModel;
use sdive::quadrature::QuadratureSpec;
use sdive::smoothing::KernelSpec;

const SIGMA: f64 = 1.0;
const H: f64 = 0.5;

fn quad() -> QuadratureSpec {
    QuadratureSpec::default().with_tolerance(1e-14, 1e-12)
}

/// `T(G_eps)` for the normal-mean model with the smoothed contamination path.
fn t_of(eps: f64, y: f64, tuning: TuningPair) -> f64 {
    let model = NormalMeanModel::new(SIGMA).unwrap();
    let base: Arc<dyn DensityEvaluator> = Arc::new(NormalDensity::new(0.0, SIGMA.hypot(H)).unwrap());
    let spike: Arc<dyn DensityEvaluator> = Arc::new(NormalDensity::new(y, H).unwrap());
    let g = Mixture::contaminate(base, spike, eps).unwrap();
    let opts = SolverOptions { max_iter: 200, param_tol: 1e-14, grad_tol: 1e-13, simplex: false };
    let f = fit_functional(&g, &model, KernelSpec::gaussian(H).unwrap(), tuning, quad(), &[0.0], &opts).unwrap();
    f.theta_hat[0]
}

/// Forward differences: first derivative and `(2 T0 - 5 T1 + 4 T2 - T3) / e^2`.
fn finite_difference(y: f64, tuning: TuningPair, e: f64) -> (f64, f64) {
    let t: Vec<f64> = (0..4).map(|k| t_of(k as f64 * e, y, tuning)).collect();
    let d1 = (-3.0 * t[0] + 4.0 * t[1] - t[2]) / (2.0 * e);
    let d2 = (2.0 * t[0] - 5.0 * t[1] + 4.0 * t[2] - t[3]) / (e * e);
    (d1, d2)
}

fn check(alpha: f64, lambda: f64, y: f64) {
    let tuning = TuningPair::new(alpha, lambda).unwrap();
    let model = NormalMeanModel::new(SIGMA).unwrap();
    let p = second_order_if(&model, &[0.0], KernelSpec::gaussian(H).unwrap(), &tuning, &[y], &quad()).unwrap()[0];
    let (d1, d2) = finite_difference(y, tuning, 2e-4);
    assert!((p.t1 - d1).abs() <= 1e-2 * p.t1.abs().max(1.0), "T' at y={y}: analytic {} vs {d1}", p.t1);
    assert!((p.t2 - d2).abs() <= 2e-2 * p.t2.abs().max(1.0), "T'' at y={y}: analytic {} vs {d2}", p.t2);
}

#[test]
fn derived_second_order_matches_refits_negative_lambda() {
    for y in [1.0, 3.0] {
        check(0.5, -0.5, y);
    }
}

#[test]
fn derived_second_order_matches_refits_positive_lambda() {
    check(0.3, 0.8, 2.0);
}

#[test]
fn derived_second_order_matches_refits_l2_case() {
    check(1.0, -1.0, 2.5);
}

#[test]
fn printed_form_disagrees_with_refits() {
    let tuning = TuningPair::new(0.5, -0.5).unwrap();
    let model = NormalMeanModel::new(SIGMA).unwrap();
    let printed = second_order_if_printed(&model, &[0.0], KernelSpec::gaussian(H).unwrap(), &tuning, &[3.0], &quad())
        .unwrap()[0]
        .2
        .unwrap();
    let (_, d2) = finite_difference(3.0, tuning, 2e-3);
    assert!((printed - d2).abs() > 0.5 * d2.abs(), "printed {printed} vs refit {d2}");
}

