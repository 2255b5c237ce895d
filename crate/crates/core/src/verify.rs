//! Self-verification suite: invariant checks on the built-in models and small
//! Monte Carlo comparisons against 1-D reference solutions.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::{closed_form_sphere_quadratic, position_boundary_infimum, OptimizerConfig, SamplingBox};
use crate::coarse::{free_energy, projected_hjb_residual, Quadrature, ResolvedSplit};
use crate::dynamics::{fmt_f64, IntegratorConfig};
use crate::error::Result;
use crate::hitting::{estimate_committor, estimate_mfet};
use crate::linear::kernel::max_abs;
use crate::model::{DomainSpec, SystemSpec};
use crate::models::{double_pendulum, linearized_double_pendulum, linearized_domains, ou_1d, pendulum_n, pendulum_s};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check { name: name.into(), value, tolerance, pass: value.is_finite() && value <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `check,value,tolerance,pass`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "check,value,tolerance,pass")?;
        for c in &self.checks {
            writeln!(w, "{},{},{},{}", c.name, fmt_f64(c.value), fmt_f64(c.tolerance), c.pass)?;
        }
        Ok(())
    }
}

fn random_states(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect()
}

fn hjb_scaled_max(sys: &SystemSpec, states: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0_f64;
    for x in states {
        let g = sys.gradient(x)?;
        let g2: f64 = g.iter().map(|v| v * v).sum();
        worst = worst.max(sys.hjb_residual(x)?.abs() / (1.0 + g2));
    }
    Ok(worst)
}

/// Mean exit time of `dX = −aX dt + √ε dW` from `(−1, 1)` at `x0`, by
/// central differences on `nodes` points.
fn ou_exit_time(a: f64, eps: f64, x0: f64, nodes: usize) -> f64 {
    let h = 2.0 / (nodes - 1) as f64;
    let m = nodes - 2;
    let diff = 0.5 * eps / (h * h);
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    for k in 0..m {
        let x = -1.0 + (k + 1) as f64 * h;
        let adv = -a * x / (2.0 * h);
        let (lo, di, up) = (diff - adv, -2.0 * diff, diff + adv);
        let (cprev, dprev) = if k > 0 { (cp[k - 1], dp[k - 1]) } else { (0.0, 0.0) };
        let den = di - lo * cprev;
        cp[k] = up / den;
        dp[k] = (-1.0 - lo * dprev) / den;
    }
    let mut u = vec![0.0; nodes];
    for k in (0..m).rev() {
        u[k + 1] = dp[k] - cp[k] * u[k + 2];
    }
    let s = (x0 + 1.0) / h;
    let i = (s.floor() as usize).min(nodes - 2);
    let w = s - i as f64;
    (1.0 - w) * u[i] + w * u[i + 1]
}

/// `∫_{−1}^{x} e^{s²/ε} ds / ∫_{−1}^{1} e^{s²/ε} ds` by Simpson's rule.
fn ou_committor(eps: f64, x0: f64) -> f64 {
    let simpson = |b: f64| {
        let n = 4000;
        let h = (b + 1.0) / n as f64;
        let f = |s: f64| (s * s / eps).exp();
        let mut acc = f(-1.0) + f(b);
        for i in 1..n {
            acc += f(-1.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    simpson(x0) / simpson(1.0)
}

/// Runs every check; `trials` sets the Monte Carlo budget of the oracle
/// comparisons.
pub fn run(trials: u64, seed: u64) -> Result<Report> {
    let mut checks = Vec::new();
    let sys = double_pendulum();
    let (lin_sys, lin) = linearized_double_pendulum();
    let states = random_states(4, 1000, seed);

    checks.push(Check::at_most("gradient_check_double_pendulum", sys.gradient_check(&states[..32]), 1e-6));
    checks.push(Check::at_most("hjb_residual_double_pendulum", hjb_scaled_max(&sys, &states)?, 1e-10));
    checks.push(Check::at_most("hjb_residual_linearized", hjb_scaled_max(&lin_sys, &states)?, 1e-10));

    let sigma = lin.clone().with_gramian()?;
    let sigma = sigma.gramian().expect("gramian was just solved").clone();
    checks.push(Check::at_most("lyapunov_residual_linearized", lin.lyapunov_residual(&sigma), 1e-10));
    let mut block = DMatrix::zeros(4, 4);
    let n_inv = pendulum_n().try_inverse().expect("N is invertible");
    let s_inv = pendulum_s().try_inverse().expect("S is invertible");
    block.view_mut((0, 0), (2, 2)).copy_from(&n_inv);
    block.view_mut((2, 2), (2, 2)).copy_from(&s_inv);
    checks.push(Check::at_most("lyapunov_block_solution", max_abs(&(&sigma - block)), 1e-10));

    let (_, d2) = linearized_domains();
    let numeric = position_boundary_infimum(&lin_sys, &d2, &SamplingBox::for_system(&lin_sys), &OptimizerConfig::default())?;
    let closed = closed_form_sphere_quadratic(&pendulum_n(), 0.5)?;
    checks.push(Check::at_most("linearized_d2_infimum", (numeric.value - closed).abs(), 1e-6));

    let split = ResolvedSplit::positions(4, Quadrature::default_grid())?;
    let closed_split = ResolvedSplit::positions(4, Quadrature::ClosedFormGaussian)?;
    let z = [0.3, -0.2];
    let lbar = free_energy(&lin_sys, &split, &z, 0.5)?;
    let lbar_closed = free_energy(&lin_sys, &closed_split, &z, 0.5)?;
    let quad = 0.5 * (pendulum_n() * nalgebra::DVector::from_column_slice(&z)).dot(&nalgebra::DVector::from_column_slice(&z));
    checks.push(Check::at_most("free_energy_linearized_grid", (lbar - quad).abs(), 1e-8));
    checks.push(Check::at_most("free_energy_linearized_closed_form", (lbar_closed - quad).abs(), 1e-8));
    let full = ResolvedSplit::new(4, vec![0, 2], Quadrature::ClosedFormGaussian)?;
    checks.push(Check::at_most(
        "projected_hjb_linearized",
        projected_hjb_residual(&lin_sys, &full, &[0.2, -0.1], 0.5, 1e-4)?.abs(),
        1e-6,
    ));

    let ou = ou_1d(1.0)?;
    let cfg = IntegratorConfig { bridge_crossing: true, ..IntegratorConfig::new(1e-3, 1e3) };
    let unit = DomainSpec::ball("unit", vec![0], vec![0.0], 1.0);
    let mfet = estimate_mfet(&ou, &unit, 0.5, &[0.0], trials, &cfg, seed)?;
    let oracle = ou_exit_time(1.0, 0.5, 0.0, 100_000);
    checks.push(Check::at_most("ou_mfet_oracle_z", (mfet.mean - oracle).abs() / mfet.stderr, 3.0));
    let a = DomainSpec::below("A", 0, -1.0);
    let b = DomainSpec::above("B", 0, 1.0);
    let q = estimate_committor(&ou, &a, &b, 0.5, &[0.25], trials, &cfg, seed.wrapping_add(1))?;
    checks.push(Check::at_most("ou_committor_oracle_z", (q.q - ou_committor(0.5, 0.25)).abs() / q.stderr, 3.0));

    Ok(Report { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_solutions() {
        assert!((ou_exit_time(1.0, 0.5, 0.0, 100_000) - 4.501_602_416).abs() < 1e-6);
        assert!((ou_committor(0.5, 0.25) - 0.555_154_217).abs() < 1e-8);
        assert!((ou_committor(0.5, 0.0) - 0.5).abs() < 1e-12);
    }
}
