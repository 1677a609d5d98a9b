//! Cross-module properties of the estimator and its diagnostics.

use proptest::prelude::*;
use sdive::diagnostics::{j_star_forms, sandwich_cov};
use sdive::estimator::{estimating_equation, fit, BandwidthRule, FitConfig, Method};
use sdive::models::{sample_contaminated, DistSpec, NormalModel};
use sdive::simulation::{run_simulation, SimulationConfig};
use sdive::smoothing::{smooth_data, KernelSpec};
use sdive::{QuadratureSpec, TuningPair};

fn sample(n: usize, seed: u64) -> Vec<f64> {
    sample_contaminated(&DistSpec::Normal { mu: 0.0, sigma: 3.0 }, None, 0.0, n, seed).unwrap()
}

fn star(alpha: f64, lambda: f64, h: f64) -> FitConfig {
    FitConfig::new(Method::MsdeStar, TuningPair::new(alpha, lambda).unwrap())
        .with_bandwidth(BandwidthRule::Fixed(h))
        .with_tolerances(1e-11, 1e-10)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn shift_equivariance(seed in 0u64..1000, c in -20.0f64..20.0, alpha in 0.0f64..1.0, lambda in -1.0f64..1.0) {
        let x = sample(40, seed);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let cfg = star(alpha, lambda, 1.0);
        let a = fit(&x, &NormalModel, &cfg).unwrap();
        let b = fit(&shifted, &NormalModel, &cfg).unwrap();
        prop_assert!(a.converged && b.converged);
        prop_assert!((b.theta_hat[0] - a.theta_hat[0] - c).abs() <= 1e-6);
        prop_assert!((b.theta_hat[1] - a.theta_hat[1]).abs() <= 1e-6);
    }

    #[test]
    fn scale_equivariance(seed in 0u64..1000, c in 0.2f64..5.0, alpha in 0.0f64..1.0, lambda in -1.0f64..1.0) {
        let x = sample(40, seed);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = fit(&x, &NormalModel, &star(alpha, lambda, 0.8)).unwrap();
        let b = fit(&scaled, &NormalModel, &star(alpha, lambda, 0.8 * c)).unwrap();
        prop_assert!(a.converged && b.converged);
        for j in 0..2 {
            prop_assert!((b.theta_hat[j] - c * a.theta_hat[j]).abs() <= 1e-5 * c.max(1.0));
        }
    }

    #[test]
    fn converged_fits_solve_their_equation(seed in 0u64..1000, alpha in 0.0f64..1.0, lambda in -1.0f64..2.0) {
        let x = sample(30, seed);
        let cfg = FitConfig::new(Method::MsdeStar, TuningPair::new(alpha, lambda).unwrap());
        let f = fit(&x, &NormalModel, &cfg).unwrap();
        prop_assume!(f.converged);
        let kernel = KernelSpec::gaussian(f.bandwidth_used.unwrap()).unwrap();
        let g = smooth_data(&x, kernel).unwrap();
        let eq = estimating_equation(&g, &NormalModel, kernel, cfg.tuning, cfg.quad, &f.theta_hat).unwrap();
        let norm = eq.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= cfg.grad_tol, "equation norm {norm}");
    }

    #[test]
    fn sandwich_is_symmetric_positive(mu in -5.0f64..5.0, sigma in 0.3f64..4.0, h in 0.1f64..2.0, alpha in 0.0f64..1.0) {
        let c = sandwich_cov(&NormalModel, &[mu, sigma], KernelSpec::gaussian(h).unwrap(), alpha, &QuadratureSpec::default()).unwrap();
        for m in [&c.j_star, &c.v_star, &c.sandwich] {
            prop_assert!((m - m.transpose()).amax() <= 1e-12 * m.amax());
            prop_assert!(m.clone().cholesky().is_some());
        }
    }
}

#[test]
fn raw_j_star_forms_are_nearly_symmetric() {
    let f = j_star_forms(&NormalModel, &[1.0, 2.0], KernelSpec::gaussian(0.7).unwrap(), 0.3, &QuadratureSpec::default()).unwrap();
    for m in [&f.single, &f.expected_outer] {
        assert!((m - m.transpose()).amax() <= 1e-9);
    }
}

#[test]
fn efficiency_drops_with_alpha_at_the_model() {
    let mut cfg = SimulationConfig::new(vec![0.0, 1.0], vec![0.0]);
    cfg.replications = 200;
    cfg.seed = 5;
    let r = run_simulation(&cfg).unwrap();
    let (lo, hi) = (r.cell(0.0, 0.0, "mu").unwrap(), r.cell(1.0, 0.0, "mu").unwrap());
    assert!(hi.mse >= lo.mse - 2.0 * lo.mc_stderr, "{} vs {}", hi.mse, lo.mse);
}

#[test]
fn mle_reduction_at_tiny_bandwidth() {
    let x = sample(50, 77);
    let f = fit(&x, &NormalModel, &star(0.0, 0.0, 1e-3)).unwrap();
    let mle = sdive::ParametricModel::mle(&NormalModel, &x).unwrap();
    assert!((f.theta_hat[0] - mle[0]).abs() <= 1e-2 && (f.theta_hat[1] - mle[1]).abs() <= 1e-2);
}
