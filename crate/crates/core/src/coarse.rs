//! Free energy in resolved variables, `L̄(z) = −ε log ∫ exp(−H/ε) dη dζ`,
//! normalized to vanish at the equilibrium, and the residual of the
//! projected HJB equation it satisfies.
//!
//! Marginal integrals are centred on the conditional mode of the unresolved
//! variables and evaluated either in closed form (H quadratic in the
//! unresolved variables) or on a tensor trapezoid grid aligned with the
//! principal axes of the local Gaussian approximation. Everything is
//! accumulated in log space.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::fmt_f64;
use crate::error::{Error, Result};
use crate::linear::kernel::eigen_sym;
use crate::model::SystemSpec;

pub const MIN_GRID_NODES: usize = 16;
pub const DEFAULT_GRID_NODES: usize = 64;
/// Grid half-width in local standard deviations.
pub const DEFAULT_GRID_SIGMAS: f64 = 8.0;
pub const LIMIT_EPS: [f64; 3] = [0.2, 0.1, 0.05];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quadrature {
    /// Exact Gaussian integral; requires `H` quadratic in the unresolved
    /// variables (verified by sampling).
    ClosedFormGaussian,
    TensorGrid { nodes: usize, sigmas: f64 },
}

impl Quadrature {
    pub fn default_grid() -> Self {
        Quadrature::TensorGrid { nodes: DEFAULT_GRID_NODES, sigmas: DEFAULT_GRID_SIGMAS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSplit {
    pub resolved: Vec<usize>,
    pub unresolved: Vec<usize>,
    pub quadrature: Quadrature,
}

impl ResolvedSplit {
    pub fn new(n: usize, resolved: Vec<usize>, quadrature: Quadrature) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in &resolved {
            if i >= n || seen[i] {
                return Err(Error::Argument(format!("resolved index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if let Quadrature::TensorGrid { nodes, sigmas } = quadrature {
            if nodes < MIN_GRID_NODES {
                return Err(Error::Argument(format!("tensor grid needs at least {MIN_GRID_NODES} nodes per axis")));
            }
            if !(sigmas > 0.0) {
                return Err(Error::Argument("grid half-width must be positive".into()));
            }
        }
        let unresolved = (0..n).filter(|i| !seen[*i]).collect();
        Ok(ResolvedSplit { resolved, unresolved, quadrature })
    }

    /// Resolve the positions `q` of an `n = 2d` system.
    pub fn positions(n: usize, quadrature: Quadrature) -> Result<Self> {
        Self::new(n, (0..n / 2).collect(), quadrature)
    }

    fn assemble(&self, z: &[f64], u: &[f64], x: &mut [f64]) {
        for (k, &i) in self.resolved.iter().enumerate() {
            x[i] = z[k];
        }
        for (k, &i) in self.unresolved.iter().enumerate() {
            x[i] = u[k];
        }
    }
}

/// Gaussian approximation of `exp(−H/ε)` in the unresolved variables at fixed `z`.
struct LocalGaussian {
    mode: Vec<f64>,
    /// Hessian of `H` in the unresolved variables at the mode.
    curvature: DMatrix<f64>,
    eigvals: DVector<f64>,
    eigvecs: DMatrix<f64>,
}

struct Marginal<'a> {
    sys: &'a SystemSpec,
    split: &'a ResolvedSplit,
    eps: f64,
}

impl<'a> Marginal<'a> {
    fn energy(&self, z: &[f64], u: &[f64], x: &mut [f64]) -> f64 {
        self.split.assemble(z, u, x);
        self.sys.hamiltonian(x)
    }

    fn unresolved_gradient(&self, z: &[f64], u: &[f64], x: &mut [f64], g: &mut [f64], out: &mut [f64]) {
        self.split.assemble(z, u, x);
        self.sys.gradient_into(x, g);
        for (k, &i) in self.split.unresolved.iter().enumerate() {
            out[k] = g[i];
        }
    }

    fn curvature(&self, z: &[f64], u: &[f64]) -> DMatrix<f64> {
        let k = u.len();
        let n = self.sys.dim();
        let (mut x, mut g) = (vec![0.0; n], vec![0.0; n]);
        let (mut gp, mut gm) = (vec![0.0; k], vec![0.0; k]);
        let mut v = u.to_vec();
        let mut hess = DMatrix::zeros(k, k);
        for j in 0..k {
            let h = 1e-4 * u[j].abs().max(1.0);
            v[j] = u[j] + h;
            self.unresolved_gradient(z, &v, &mut x, &mut g, &mut gp);
            v[j] = u[j] - h;
            self.unresolved_gradient(z, &v, &mut x, &mut g, &mut gm);
            v[j] = u[j];
            for i in 0..k {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        (&hess + hess.transpose()) * 0.5
    }

    /// Damped Newton for the conditional minimizer of `H` over the unresolved variables.
    fn local_gaussian(&self, z: &[f64]) -> Result<LocalGaussian> {
        let k = self.split.unresolved.len();
        let n = self.sys.dim();
        let eq = self.sys.equilibrium();
        let mut u: Vec<f64> = self.split.unresolved.iter().map(|&i| eq[i]).collect();
        let (mut x, mut g, mut gu) = (vec![0.0; n], vec![0.0; n], vec![0.0; k]);
        let mut energy = self.energy(z, &u, &mut x);
        for _ in 0..100 {
            let hess = self.curvature(z, &u);
            self.unresolved_gradient(z, &u, &mut x, &mut g, &mut gu);
            let eig = eigen_sym(&hess)?;
            if eig.min() <= 0.0 {
                return Err(Error::NotConfining(format!("conditional Hessian has eigenvalue {:e} at z = {z:?}", eig.min())));
            }
            let rhs = DVector::from_column_slice(&gu);
            let step = &eig.vectors * DMatrix::from_diagonal(&eig.values.map(|l| 1.0 / l)) * eig.vectors.transpose() * rhs;
            let mut t = 1.0;
            let mut trial = u.clone();
            let mut accepted = false;
            for _ in 0..40 {
                for i in 0..k {
                    trial[i] = u[i] - t * step[i];
                }
                let e = self.energy(z, &trial, &mut x);
                if e <= energy {
                    energy = e;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            let moved = t * step.norm();
            if accepted {
                u.copy_from_slice(&trial);
            }
            if !accepted || moved <= 1e-13 * (1.0 + u.iter().fold(0.0_f64, |a, v| a.max(v.abs()))) {
                break;
            }
        }
        let curvature = self.curvature(z, &u);
        let eig = eigen_sym(&curvature)?;
        if eig.min() <= 0.0 {
            return Err(Error::NotConfining(format!("conditional Hessian has eigenvalue {:e} at z = {z:?}", eig.min())));
        }
        Ok(LocalGaussian { mode: u, curvature, eigvals: eig.values, eigvecs: eig.vectors })
    }

    /// Point along principal axes: `mode + Σ_i v_i σ_i s_i`, `σ_i = √(ε/λ_i)`.
    fn axis_point(&self, lg: &LocalGaussian, s: &[f64], out: &mut [f64]) {
        let k = s.len();
        out.copy_from_slice(&lg.mode);
        for a in 0..k {
            let sig = (self.eps / lg.eigvals[a]).sqrt();
            for i in 0..k {
                out[i] += lg.eigvecs[(i, a)] * sig * s[a];
            }
        }
    }

    fn log_det_scale(&self, lg: &LocalGaussian) -> f64 {
        lg.eigvals.iter().map(|l| 0.5 * (self.eps / l).ln()).sum()
    }

    /// `log ∫ exp(−H/ε) du` and the conditional mean of `∇_z H`.
    fn log_integral(&self, z: &[f64], want_mean_force: bool) -> Result<(f64, Vec<f64>)> {
        let n = self.sys.dim();
        let k = self.split.unresolved.len();
        let nz = self.split.resolved.len();
        let mut x = vec![0.0; n];
        let mut g = vec![0.0; n];
        if k == 0 {
            let e = self.energy(z, &[], &mut x);
            let mut mf = vec![0.0; nz];
            if want_mean_force {
                self.sys.gradient_into(&x, &mut g);
                for (c, &i) in self.split.resolved.iter().enumerate() {
                    mf[c] = g[i];
                }
            }
            return Ok((-e / self.eps, mf));
        }
        let lg = self.local_gaussian(z)?;
        let mut u = vec![0.0; k];
        let force = |u: &[f64], x: &mut [f64], g: &mut [f64], acc: &mut [f64], w: f64| {
            self.split.assemble(z, u, x);
            self.sys.gradient_into(x, g);
            for (c, &i) in self.split.resolved.iter().enumerate() {
                acc[c] += w * g[i];
            }
        };

        match self.split.quadrature {
            Quadrature::ClosedFormGaussian => {
                let e0 = self.energy(z, &lg.mode, &mut x);
                // H must equal its quadratic model along sampled directions
                let mut s = vec![0.0; k];
                for a in 0..k {
                    for sign in [-2.5, 1.5] {
                        s.iter_mut().for_each(|v| *v = 0.0);
                        s[a] = sign;
                        if k > 1 {
                            s[(a + 1) % k] = 0.7 * sign;
                        }
                        self.axis_point(&lg, &s, &mut u);
                        let d: Vec<f64> = u.iter().zip(&lg.mode).map(|(a, b)| a - b).collect();
                        let dv = DVector::from_column_slice(&d);
                        let model = e0 + 0.5 * (dv.transpose() * &lg.curvature * &dv)[(0, 0)];
                        let actual = self.energy(z, &u, &mut x);
                        if (actual - model).abs() > 1e-7 * (1.0 + actual.abs()) * self.eps.max(1.0) {
                            return Err(Error::Argument(format!(
                                "H is not quadratic in the unresolved variables at z = {z:?}; use the tensor grid"
                            )));
                        }
                    }
                }
                let log_det: f64 = lg.eigvals.iter().map(|l| l.ln()).sum();
                let log_int = -e0 / self.eps + 0.5 * k as f64 * (2.0 * std::f64::consts::PI * self.eps).ln() - 0.5 * log_det;
                let mut mf = vec![0.0; nz];
                if want_mean_force {
                    // sigma points ±σ_a v_a are exact for integrands of degree ≤ 3
                    force(&lg.mode, &mut x, &mut g, &mut mf, 1.0 - k as f64);
                    for a in 0..k {
                        for sign in [-1.0, 1.0] {
                            s.iter_mut().for_each(|v| *v = 0.0);
                            s[a] = sign;
                            self.axis_point(&lg, &s, &mut u);
                            force(&u, &mut x, &mut g, &mut mf, 0.5);
                        }
                    }
                }
                Ok((log_int, mf))
            }
            Quadrature::TensorGrid { nodes, sigmas } => {
                let h = 2.0 * sigmas / (nodes - 1) as f64;
                let total = nodes.pow(k as u32);
                let mut idx = vec![0usize; k];
                let mut s = vec![0.0; k];
                let mut logs = Vec::with_capacity(total);
                let mut edge_max = f64::NEG_INFINITY;
                for flat in 0..total {
                    let mut r = flat;
                    let mut on_edge = false;
                    for a in 0..k {
                        idx[a] = r % nodes;
                        r /= nodes;
                        s[a] = -sigmas + h * idx[a] as f64;
                        on_edge |= idx[a] == 0 || idx[a] == nodes - 1;
                    }
                    self.axis_point(&lg, &s, &mut u);
                    let lw = -self.energy(z, &u, &mut x) / self.eps;
                    if on_edge {
                        edge_max = edge_max.max(lw);
                    }
                    logs.push(lw);
                }
                let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !top.is_finite() {
                    return Err(Error::Underflow);
                }
                if edge_max - top > -20.0 {
                    return Err(Error::NotConfining(format!(
                        "integrand at the grid edge is only {:.1} log-units below its peak at z = {z:?}",
                        top - edge_max
                    )));
                }
                let mut sum = 0.0;
                let mut mf = vec![0.0; nz];
                for (flat, lw) in logs.iter().enumerate() {
                    let w = (lw - top).exp();
                    sum += w;
                    if want_mean_force && w > 0.0 {
                        let mut r = flat;
                        for a in 0..k {
                            s[a] = -sigmas + h * (r % nodes) as f64;
                            r /= nodes;
                        }
                        self.axis_point(&lg, &s, &mut u);
                        force(&u, &mut x, &mut g, &mut mf, w);
                    }
                }
                mf.iter_mut().for_each(|v| *v /= sum);
                let log_int = top + sum.ln() + k as f64 * h.ln() + self.log_det_scale(&lg);
                Ok((log_int, mf))
            }
        }
    }
}

/// Free-energy evaluator with the reference value cached.
pub struct FreeEnergy<'a> {
    marginal: Marginal<'a>,
    reference: f64,
}

impl<'a> FreeEnergy<'a> {
    pub fn new(sys: &'a SystemSpec, split: &'a ResolvedSplit, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Argument(format!("noise level must be positive, got {eps}")));
        }
        if split.resolved.len() + split.unresolved.len() != sys.dim() {
            return Err(Error::Dimension { expected: sys.dim(), got: split.resolved.len() + split.unresolved.len() });
        }
        let marginal = Marginal { sys, split, eps };
        let z_ref = Self::reference_point(sys, split);
        let (log_int, _) = marginal.log_integral(&z_ref, false)?;
        Ok(FreeEnergy { marginal, reference: -eps * log_int })
    }

    pub fn reference_point(sys: &SystemSpec, split: &ResolvedSplit) -> Vec<f64> {
        split.resolved.iter().map(|&i| sys.equilibrium()[i]).collect()
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        let k = self.marginal.split.resolved.len();
        if z.len() != k {
            return Err(Error::Dimension { expected: k, got: z.len() });
        }
        Ok(())
    }

    /// `L̄(z) − L̄(z_ref)`.
    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        if z == Self::reference_point(self.marginal.sys, self.marginal.split).as_slice() {
            return Ok(0.0);
        }
        let (log_int, _) = self.marginal.log_integral(z, false)?;
        Ok(-self.marginal.eps * log_int - self.reference)
    }

    /// Conditional expectation `E_μ[∇_z H | z]`.
    pub fn mean_force(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        Ok(self.marginal.log_integral(z, true)?.1)
    }
}

pub fn free_energy(sys: &SystemSpec, split: &ResolvedSplit, z: &[f64], eps: f64) -> Result<f64> {
    FreeEnergy::new(sys, split, eps)?.eval(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeEnergyLimit {
    pub value: f64,
    /// `L̄` at ε = 0.2, 0.1, 0.05.
    pub samples: [f64; 3],
    pub warning: Option<String>,
}

/// ε → 0 limit of the free energy by two-level Richardson extrapolation over
/// ε ∈ {0.2, 0.1, 0.05}.
pub fn free_energy_limit(sys: &SystemSpec, split: &ResolvedSplit, z: &[f64]) -> Result<FreeEnergyLimit> {
    let mut f = [0.0; 3];
    for (slot, eps) in f.iter_mut().zip(LIMIT_EPS) {
        *slot = free_energy(sys, split, z, eps)?;
    }
    let r1 = 2.0 * f[1] - f[0];
    let r2 = 2.0 * f[2] - f[1];
    let value = (4.0 * r2 - r1) / 3.0;
    let (d1, d2) = (f[1] - f[0], f[2] - f[1]);
    let tol = 1e-8 * (1.0 + f[2].abs());
    let warning = (d1.abs() > tol && d2.abs() > tol && d1.signum() != d2.signum())
        .then(|| format!("free energy is not monotone in ε at z = {z:?}: {f:?}"));
    Ok(FreeEnergyLimit { value, samples: f, warning })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedHjb {
    /// `f̄·∇L̄ + |∇L̄|²_{D̄}` with `f̄ = (J̄ − D̄) E[∇_z H | z]`.
    pub residual: f64,
    pub grad_free_energy: Vec<f64>,
    pub mean_force: Vec<f64>,
}

fn check_paired(sys: &SystemSpec, split: &ResolvedSplit) -> Result<()> {
    let d = sys.dim() / 2;
    let has = |i: usize| split.resolved.contains(&i);
    if split.resolved.iter().all(|&i| i < d) {
        return Err(Error::DegenerateProjection(
            "resolving positions only gives projected dynamics q̇ = 0; the free energy is still available".into(),
        ));
    }
    for &i in &split.resolved {
        let partner = if i < d { i + d } else { i - d };
        if !has(partner) {
            return Err(Error::DegenerateProjection(format!("resolved index {i} lacks its conjugate {partner}")));
        }
    }
    Ok(())
}

/// Residual of the projected HJB equation at `z`: `∇L̄` from central
/// differences of the free energy, the projected drift from the conditional
/// mean force.
pub fn projected_hjb(sys: &SystemSpec, split: &ResolvedSplit, z: &[f64], eps: f64, fd_step: f64) -> Result<ProjectedHjb> {
    check_paired(sys, split)?;
    if !(fd_step > 0.0) {
        return Err(Error::Argument("fd_step must be positive".into()));
    }
    let fe = FreeEnergy::new(sys, split, eps)?;
    fe.check(z)?;
    let k = z.len();
    let mut grad = vec![0.0; k];
    let mut y = z.to_vec();
    for i in 0..k {
        y[i] = z[i] + fd_step;
        let fp = fe.eval(&y)?;
        y[i] = z[i] - fd_step;
        let fm = fe.eval(&y)?;
        y[i] = z[i];
        grad[i] = (fp - fm) / (2.0 * fd_step);
    }
    let mean_force = fe.mean_force(z)?;
    let res = &split.resolved;
    let mut residual = 0.0;
    for a in 0..k {
        let mut fbar = 0.0;
        for b in 0..k {
            fbar += sys.drift_matrix()[(res[a], res[b])] * mean_force[b];
            residual += grad[a] * sys.friction()[(res[a], res[b])] * grad[b];
        }
        residual += fbar * grad[a];
    }
    Ok(ProjectedHjb { residual, grad_free_energy: grad, mean_force })
}

pub fn projected_hjb_residual(sys: &SystemSpec, split: &ResolvedSplit, z: &[f64], eps: f64, fd_step: f64) -> Result<f64> {
    Ok(projected_hjb(sys, split, z, eps, fd_step)?.residual)
}

/// `z1,...,zk,Lbar`
pub fn write_surface_csv<W: Write>(mut w: W, points: &[Vec<f64>], values: &[f64]) -> Result<()> {
    let k = points.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=k).map(|i| format!("z{i}")).chain(std::iter::once("Lbar".to_string())).collect();
    writeln!(w, "{}", header.join(","))?;
    for (z, v) in points.iter().zip(values) {
        let row: Vec<String> = z.iter().copied().chain(std::iter::once(*v)).map(fmt_f64).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
