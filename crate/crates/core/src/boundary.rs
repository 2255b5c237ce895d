//! Infimum of an objective over an implicit boundary `{c = 0}`: multistart
//! quadratic-penalty descent with finite-difference BFGS, followed by a
//! Newton restoration onto the constraint.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::fmt_f64;
use crate::error::{Error, Result};
use crate::linear::kernel::eigen_sym;
use crate::model::{Coordinate, DomainSpec, SystemSpec};

pub const CONSTRAINT_TOL: f64 = 1e-6;
pub const AGREEMENT_TOL: f64 = 1e-6;
pub const MIN_AGREEING_STARTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    /// BFGS iterations per penalty stage.
    pub max_iter: usize,
    /// Step-norm tolerance ending each local run.
    pub tol: f64,
    pub seed: u64,
    pub penalty_weights: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { n_starts: 64, max_iter: 400, tol: 1e-10, seed: 0, penalty_weights: vec![1e2, 1e4, 1e6, 1e8] }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_starts == 0 {
            return Err(Error::Argument("n_starts must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument("tol must be positive".into()));
        }
        if self.penalty_weights.is_empty() || self.penalty_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Argument("penalty schedule must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box for drawing start points.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SamplingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::Argument("box bounds must satisfy lower ≤ upper".into()));
        }
        Ok(SamplingBox { lower, upper })
    }

    /// Positions in (−π, π], momenta in [−3, 3].
    pub fn phase_space(d: usize) -> Self {
        let pi = std::f64::consts::PI;
        let mut lower = vec![-pi; d];
        let mut upper = vec![pi; d];
        lower.extend(std::iter::repeat_n(-3.0, d));
        upper.extend(std::iter::repeat_n(3.0, d));
        SamplingBox { lower, upper }
    }

    pub fn for_system(sys: &SystemSpec) -> Self {
        let mut b = Self::phase_space(sys.dim() / 2);
        for (i, kind) in sys.topology().iter().enumerate() {
            if *kind == Coordinate::Angular {
                b.lower[i] = -std::f64::consts::PI;
                b.upper[i] = std::f64::consts::PI;
            }
        }
        b
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| if l == u { *l } else { rng.gen_range(*l..=*u) }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryInfimum {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub n_converged: usize,
    /// Converged starts whose value lies within 1e−6 of the best.
    pub n_agreeing: usize,
}

impl BoundaryInfimum {
    /// Accepted as the infimum (not just an upper bound).
    pub fn is_certified(&self) -> bool {
        self.n_agreeing >= MIN_AGREEING_STARTS
    }

    /// `value,argmin_1..argmin_n,n_converged`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("value".to_string())
            .chain((1..=self.argmin.len()).map(|i| format!("argmin_{i}")))
            .chain(std::iter::once("n_converged".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let mut row: Vec<String> = std::iter::once(self.value).chain(self.argmin.iter().copied()).map(fmt_f64).collect();
        row.push(self.n_converged.to_string());
        writeln!(w, "{}", row.join(","))?;
        Ok(())
    }
}

fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        out[i] = (fp - fm) / (2.0 * h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on `obj + w·c²` with gradients assembled from separate finite
/// differences of `obj` and `c`. Returns whether the step tolerance was met.
fn penalty_stage(
    objective: &dyn Fn(&[f64]) -> f64,
    level: &dyn Fn(&[f64]) -> f64,
    w: f64,
    y: &mut [f64],
    cfg: &OptimizerConfig,
) -> bool {
    let n = y.len();
    let merit = |x: &[f64]| {
        let c = level(x);
        objective(x) + w * c * c
    };
    let grad = |x: &[f64], g: &mut [f64], go: &mut [f64], gc: &mut [f64]| {
        fd_gradient(objective, x, go);
        fd_gradient(level, x, gc);
        let c = level(x);
        for i in 0..x.len() {
            g[i] = go[i] + 2.0 * w * c * gc[i];
        }
    };
    let (mut go, mut gc) = (vec![0.0; n], vec![0.0; n]);
    let mut g = vec![0.0; n];
    grad(y, &mut g, &mut go, &mut gc);
    let mut fval = merit(y);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for _ in 0..cfg.max_iter {
        for i in 0..n {
            d[i] = -(0..n).map(|j| hinv[(i, j)] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hinv.fill_with_identity();
            fresh = true;
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = -dot(&g, &g);
            if slope == 0.0 {
                return true;
            }
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..n {
                x_new[i] = y[i] + alpha * d[i];
            }
            let f_new = merit(&x_new);
            if f_new <= fval + 1e-4 * alpha * slope {
                fval = f_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        let step_norm = alpha * dot(&d, &d).sqrt();
        if !accepted {
            if fresh {
                // no descent along the gradient: at numerical stationarity
                return step_norm < cfg.tol.max(1e-12);
            }
            hinv.fill_with_identity();
            fresh = true;
            continue;
        }
        grad(&x_new, &mut g_new, &mut go, &mut gc);
        let s: Vec<f64> = x_new.iter().zip(y.iter()).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        y.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        if step_norm < cfg.tol {
            return true;
        }
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if fresh {
                let scale = sy / dot(&yv, &yv);
                hinv.fill_with_identity();
                hinv *= scale;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| hinv[(i, j)] * yv[j]).sum()).collect();
            let yhy = dot(&yv, &hy);
            for i in 0..n {
                for j in 0..n {
                    hinv[(i, j)] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
    }
    false
}

/// Newton iterations along `∇c` to land on `c = 0`.
fn restore(level: &dyn Fn(&[f64]) -> f64, y: &mut [f64]) -> f64 {
    let mut gc = vec![0.0; y.len()];
    let mut c = level(y);
    for _ in 0..50 {
        if c.abs() <= 1e-13 {
            break;
        }
        fd_gradient(level, y, &mut gc);
        let g2 = dot(&gc, &gc);
        if g2 == 0.0 {
            break;
        }
        for i in 0..y.len() {
            y[i] -= c * gc[i] / g2;
        }
        let c_new = level(y);
        if c_new.abs() >= c.abs() {
            c = c_new;
            break;
        }
        c = c_new;
    }
    c
}

struct StartOutcome {
    value: f64,
    argmin: Vec<f64>,
    violation: f64,
    converged: bool,
}

/// Best value of `objective` on `{c = 0}` over `cfg.n_starts` local runs.
pub fn boundary_infimum(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    boundary: &DomainSpec,
    sampling: &SamplingBox,
    cfg: &OptimizerConfig,
) -> Result<BoundaryInfimum> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Vec<f64>> = (0..cfg.n_starts).map(|_| sampling.sample(&mut rng)).collect();
    let level = |x: &[f64]| boundary.level(x);

    let outcomes: Vec<StartOutcome> = starts
        .into_par_iter()
        .map(|mut y| {
            let mut stationary = true;
            for &w in &cfg.penalty_weights {
                stationary = penalty_stage(objective, &level, w, &mut y, cfg);
            }
            let violation = restore(&level, &mut y).abs();
            let value = objective(&y);
            let converged = stationary && violation <= CONSTRAINT_TOL && value.is_finite();
            StartOutcome { value, argmin: y, violation, converged }
        })
        .collect();

    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.converged)
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .map(|(_, o)| o);
    let Some(best) = best else {
        let best_violation = outcomes.iter().map(|o| o.violation).fold(f64::INFINITY, f64::min);
        return Err(Error::NoConvergence { starts: cfg.n_starts, best_violation });
    };
    let n_converged = outcomes.iter().filter(|o| o.converged).count();
    let n_agreeing = outcomes.iter().filter(|o| o.converged && (o.value - best.value).abs() <= AGREEMENT_TOL).count();
    Ok(BoundaryInfimum { value: best.value, argmin: best.argmin.clone(), n_converged, n_agreeing })
}

/// Infimum of `L = H − H(x₀)` over a boundary that constrains positions only.
///
/// The kinetic energy is minimized at `p = 0`, so the search runs over the
/// first `n/2` coordinates with momenta pinned to zero.
pub fn position_boundary_infimum(
    sys: &SystemSpec,
    boundary: &DomainSpec,
    sampling: &SamplingBox,
    cfg: &OptimizerConfig,
) -> Result<BoundaryInfimum> {
    let n = sys.dim();
    let d = n / 2;
    if sampling.dim() != n {
        return Err(Error::Dimension { expected: n, got: sampling.dim() });
    }
    // the elimination is only valid if c ignores the momenta
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    for _ in 0..16 {
        let mut x = sampling.sample(&mut rng);
        let c0 = boundary.level(&x);
        for v in x[d..].iter_mut() {
            *v += rng.gen_range(-1.0..1.0);
        }
        if (boundary.level(&x) - c0).abs() > 1e-12 * c0.abs().max(1.0) {
            return Err(Error::Argument(format!("boundary `{}` depends on the momenta", boundary.label())));
        }
    }
    let embed = |q: &[f64]| {
        let mut x = vec![0.0; n];
        x[..d].copy_from_slice(q);
        x
    };
    let objective = |q: &[f64]| sys.controllability_value(&embed(q)).unwrap_or(f64::NAN);
    let reduced = DomainSpec::new(boundary.label().to_string(), {
        let b = boundary.clone();
        std::sync::Arc::new(move |q: &[f64]| {
            let mut x = vec![0.0; n];
            x[..d].copy_from_slice(q);
            b.level(&x)
        })
    });
    let sub = SamplingBox::new(sampling.lower[..d].to_vec(), sampling.upper[..d].to_vec())?;
    let r = boundary_infimum(&objective, &reduced, &sub, cfg)?;
    Ok(BoundaryInfimum { argmin: embed(&r.argmin), ..r })
}

/// `½ λ_min(Q) r²`: infimum of `½ yᵀQy` over `|y| = r`.
pub fn closed_form_sphere_quadratic(q: &DMatrix<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Argument(format!("radius must be positive, got {r}")));
    }
    let eig = eigen_sym(q)?;
    if eig.min() <= 0.0 {
        return Err(Error::NotPd(eig.min()));
    }
    Ok(0.5 * eig.min() * r * r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn closed_form_examples() {
        assert_abs_diff_eq!(closed_form_sphere_quadratic(&DMatrix::identity(3, 3), 1.0).unwrap(), 0.5);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        assert_abs_diff_eq!(closed_form_sphere_quadratic(&q, 1.0).unwrap(), 2.0, epsilon = 1e-15);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, -1.0]));
        assert!(matches!(closed_form_sphere_quadratic(&bad, 1.0), Err(Error::NotPd(_))));
    }

    #[test]
    fn quadratic_on_sphere() {
        let obj = |y: &[f64]| 0.5 * (4.0 * y[0] * y[0] + 9.0 * y[1] * y[1] + 6.0 * y[2] * y[2]);
        let sphere = DomainSpec::ball("s", vec![0, 1, 2], vec![0.0; 3], 1.5);
        let b = SamplingBox::new(vec![-2.0; 3], vec![2.0; 3]).unwrap();
        let cfg = OptimizerConfig { n_starts: 8, ..Default::default() };
        let r = boundary_infimum(&obj, &sphere, &b, &cfg).unwrap();
        assert_abs_diff_eq!(r.value, 0.5 * 4.0 * 2.25, epsilon = 1e-6);
        assert!(sphere.level(&r.argmin).abs() <= CONSTRAINT_TOL);
        assert_eq!(r.value, obj(&r.argmin));
        assert!(r.is_certified());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(OptimizerConfig { n_starts: 0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { penalty_weights: vec![], ..Default::default() }.validate().is_err());
    }
}
