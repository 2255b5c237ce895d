//! Reference solutions checked against closed forms, then the estimators
//! checked against the reference solutions.

mod common;

use common::*;
use hamreach::dynamics::IntegratorConfig;
use hamreach::hitting::{estimate_committor, estimate_hitting_prob, estimate_mfet};
use hamreach::model::DomainSpec;
use hamreach::models::{double_well_1d, double_well_potential, ou_1d};

fn bridged(dt: f64, t_max: f64) -> IntegratorConfig {
    IntegratorConfig { dt, t_max, bridge_crossing: true, ..Default::default() }
}

#[test]
fn dynkin_oracle_matches_double_integral() {
    // u(0) = (2/ε)∫₀¹ e^{y²/ε} ∫₀^y e^{−z²/ε} dz dy
    let eps = 0.5;
    let inner = |y: f64| simpson(|z| (-z * z / eps).exp(), 0.0, y, 200);
    let exact = 2.0 / eps * simpson(|y| (y * y / eps).exp() * inner(y), 0.0, 1.0, 400);
    let fd = ou_mfet(1.0, eps, 1.0, 0.0, 100_000);
    assert!((fd - exact).abs() < 1e-6, "{fd} vs {exact}");
    assert!((exact - 4.501_602_416).abs() < 1e-7);
}

#[test]
fn dynkin_oracle_brownian_limit() {
    // a → 0: u(x) = (r² − x²)/ε
    let u = ou_mfet(1e-12, 0.5, 1.0, 0.3, 10_001);
    assert!((u - (1.0 - 0.09) / 0.5).abs() < 1e-8);
}

#[test]
fn committor_oracle_linear_for_flat_potential() {
    let q = committor_1d(|_| 0.0, 0.5, -1.0, 1.0, 0.25);
    assert!((q - 0.625).abs() < 1e-12);
    let q = committor_1d(|s| 0.5 * s * s, 0.5, -1.0, 1.0, 0.25);
    assert!((q - 0.555_154_217).abs() < 1e-8);
}

#[test]
fn hitting_oracle_converges_and_matches_brownian_reflection() {
    // a → 0 on a far domain: P(max W√ε ≥ b before T) = 2(1 − Φ(b/√(εT)))
    let (eps, b, t) = (0.5, 1.0, 1.0);
    let p = ou_hitting_probability(1e-12, eps, b, t, 0.0, -10.0, 2201, 4000);
    let z = b / (eps * t).sqrt();
    let exact = erfc(z / std::f64::consts::SQRT_2);
    assert!((p - exact).abs() < 1e-4, "{p} vs {exact}");
    let coarse = ou_hitting_probability(1.0, 0.5, 1.0, 5.0, 0.0, -6.0, 1401, 5000);
    let fine = ou_hitting_probability(1.0, 0.5, 1.0, 5.0, 0.0, -6.0, 2801, 10_000);
    assert!((coarse - fine).abs() < 2e-4, "{coarse} vs {fine}");
}

fn erfc(x: f64) -> f64 {
    // tail by quadrature, enough digits for the check above
    2.0 / std::f64::consts::PI.sqrt() * simpson(|s| (-s * s).exp(), x, x + 12.0, 20_000)
}

#[test]
fn double_well_committor_symmetric() {
    let dw = double_well_1d();
    let a = DomainSpec::below("A", 0, -1.0);
    let b = DomainSpec::above("B", 0, 1.0);
    let est = estimate_committor(&dw, &a, &b, 0.5, &[0.0], 10_000, &bridged(1e-3, 1e3), 7).unwrap();
    assert_eq!(est.censored, 0);
    assert!((est.q - 0.5).abs() <= 3.0 * est.stderr, "{est:?}");
    let oracle = committor_1d(double_well_potential, 0.5, -1.0, 1.0, 0.0);
    assert!((oracle - 0.5).abs() < 1e-12);
}

#[test]
fn double_well_committor_off_center() {
    let dw = double_well_1d();
    let a = DomainSpec::below("A", 0, -1.0);
    let b = DomainSpec::above("B", 0, 1.0);
    let x0 = 0.3;
    let oracle = committor_1d(double_well_potential, 0.5, -1.0, 1.0, x0);
    let est = estimate_committor(&dw, &a, &b, 0.5, &[x0], 10_000, &bridged(1e-3, 1e3), 8).unwrap();
    assert!((est.q - oracle).abs() <= 3.0 * est.stderr, "{} vs {oracle} ± {}", est.q, est.stderr);
}

#[test]
fn exit_time_and_hitting_probability_consistent() {
    // 1 − exp(−T/E τ) ≈ p(T) once the exit law is exponential
    let dw = double_well_1d();
    let eps = 0.2;
    let b = DomainSpec::above("B", 0, 1.0);
    let cfg = bridged(1e-3, 1e4);
    let m = estimate_mfet(&dw, &b.complement(), eps, &[-1.0], 1500, &cfg, 11).unwrap();
    assert_eq!(m.timeout_count, 0);
    let horizon = m.mean;
    let h = estimate_hitting_prob(&dw, &b, horizon, eps, &[-1.0], 1500, &cfg, 12).unwrap();
    let predicted = 1.0 - (-horizon / m.mean).exp();
    let se_pred = (-horizon / m.mean).exp() * horizon / (m.mean * m.mean) * m.stderr;
    let se = (h.stderr * h.stderr + se_pred * se_pred).sqrt();
    assert!((h.p - predicted).abs() <= 3.0 * se, "p {} vs {predicted} ± {se}", h.p);
}

#[test]
fn weak_order_halving_dt() {
    let ou = ou_1d(1.0).unwrap();
    let d = DomainSpec::ball("unit", vec![0], vec![0.0], 1.0);
    let coarse = estimate_mfet(&ou, &d, 0.5, &[0.0], 10_000, &bridged(1e-3, 1e3), 21).unwrap();
    let fine = estimate_mfet(&ou, &d, 0.5, &[0.0], 10_000, &bridged(5e-4, 1e3), 21).unwrap();
    assert!((coarse.mean - fine.mean).abs() < coarse.stderr, "{} vs {} (se {})", coarse.mean, fine.mean, coarse.stderr);
}

#[test]
fn grid_detection_biases_exit_time_upward() {
    let ou = ou_1d(1.0).unwrap();
    let d = DomainSpec::ball("unit", vec![0], vec![0.0], 1.0);
    let grid = IntegratorConfig::new(4e-3, 1e3);
    let est = estimate_mfet(&ou, &d, 0.5, &[0.0], 4000, &grid, 3).unwrap();
    let oracle = ou_mfet(1.0, 0.5, 1.0, 0.0, 100_000);
    assert!(est.mean - oracle > 3.0 * est.stderr);
}
