//! System and set abstractions: stochastic port-Hamiltonian models
//! `dX = (J − D)∇H dt + √(2εD) dW`, implicit sets `{x : c(x) < 0}`, and the
//! closed-form controllability function `L = H − H(x₀)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linear::kernel::{eigen_sym, max_abs, psd_sqrt, PSD_CLAMP};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Central-difference step used to cross-check analytic gradients.
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;
pub const GRADIENT_CHECK_TOL: f64 = 1e-6;
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Linear,
    /// Wrapped into (−π, π].
    Angular,
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - 2.0 * PI * ((a - PI) / (2.0 * PI)).ceil();
    // ceil can land one period off when a − π is a tiny negative multiple
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

pub fn normalize_with(topology: &[Coordinate], x: &mut [f64]) {
    for (xi, kind) in x.iter_mut().zip(topology) {
        if *kind == Coordinate::Angular {
            *xi = wrap_angle(*xi);
        }
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension { expected, got: x.len() });
    }
    Ok(())
}

/// A stochastic port-Hamiltonian system with constant structure `J` and
/// friction `D`.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    n: usize,
    hamiltonian: ScalarFn,
    gradient: VectorFn,
    structure: DMatrix<f64>,
    friction: DMatrix<f64>,
    topology: Vec<Coordinate>,
    equilibrium: Vec<f64>,
    drift_matrix: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
    energy_at_equilibrium: f64,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("structure", &self.structure)
            .field("friction", &self.friction)
            .field("topology", &self.topology)
            .field("equilibrium", &self.equilibrium)
            .finish()
    }
}

impl SystemSpec {
    /// Builds and validates a model.
    ///
    /// `J` must be exactly antisymmetric, `D` symmetric PSD (eigenvalues down
    /// to −1e−12 are clamped), `∇H` must vanish at the equilibrium and agree
    /// with central differences of `H` at sampled states.
    pub fn new(
        name: impl Into<String>,
        hamiltonian: ScalarFn,
        gradient: VectorFn,
        structure: DMatrix<f64>,
        friction: DMatrix<f64>,
        topology: Vec<Coordinate>,
        equilibrium: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let n = equilibrium.len();
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::InvalidModel(format!("state dimension must be even and positive, got {n}")));
        }
        for (label, m) in [("J", &structure), ("D", &friction)] {
            if m.shape() != (n, n) {
                return Err(Error::InvalidModel(format!("{label} has shape {:?}, expected ({n}, {n})", m.shape())));
            }
        }
        if topology.len() != n {
            return Err(Error::Dimension { expected: n, got: topology.len() });
        }
        for i in 0..n {
            for j in 0..n {
                if structure[(i, j)] != -structure[(j, i)] {
                    return Err(Error::InvalidModel(format!("J is not antisymmetric at ({i}, {j})")));
                }
                if friction[(i, j)] != friction[(j, i)] {
                    return Err(Error::InvalidModel(format!("D is not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = eigen_sym(&friction)?;
        let clamp = PSD_CLAMP * max_abs(&friction).max(1.0);
        if eig.min() < -clamp {
            return Err(Error::NotPsd(eig.min()));
        }
        let friction = if eig.min() < 0.0 {
            let vals = eig.values.map(|v| v.max(0.0));
            let d = &eig.vectors * DMatrix::from_diagonal(&vals) * eig.vectors.transpose();
            (&d + d.transpose()) * 0.5
        } else {
            friction
        };

        let mut g = vec![0.0; n];
        gradient(&equilibrium, &mut g);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm > EQUILIBRIUM_TOL {
            return Err(Error::InvalidModel(format!("|∇H(equilibrium)| = {gnorm:e} exceeds {EQUILIBRIUM_TOL:e}")));
        }

        let drift_matrix = &structure - &friction;
        let noise_factor = psd_sqrt(&(&friction * 2.0))?;
        let energy_at_equilibrium = hamiltonian(&equilibrium);
        let sys = SystemSpec {
            name,
            n,
            hamiltonian,
            gradient,
            structure,
            friction,
            topology,
            equilibrium,
            drift_matrix,
            noise_factor,
            energy_at_equilibrium,
        };

        let mut rng = ChaCha8Rng::seed_from_u64(0x5_eed0_f9ad);
        let states: Vec<Vec<f64>> = (0..32)
            .map(|_| sys.equilibrium.iter().map(|e| e + rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let err = sys.gradient_check(&states);
        if err > GRADIENT_CHECK_TOL {
            return Err(Error::InvalidModel(format!(
                "analytic gradient disagrees with central differences (relative error {err:e})"
            )));
        }
        Ok(sys)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn structure(&self) -> &DMatrix<f64> {
        &self.structure
    }

    pub fn friction(&self) -> &DMatrix<f64> {
        &self.friction
    }

    /// `J − D`.
    pub fn drift_matrix(&self) -> &DMatrix<f64> {
        &self.drift_matrix
    }

    /// `√(2D)`; the diffusion at noise level ε is `√ε` times this.
    pub fn noise_factor(&self) -> &DMatrix<f64> {
        &self.noise_factor
    }

    pub fn topology(&self) -> &[Coordinate] {
        &self.topology
    }

    pub fn equilibrium(&self) -> &[f64] {
        &self.equilibrium
    }

    pub fn hamiltonian(&self, x: &[f64]) -> f64 {
        (self.hamiltonian)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x)?;
        let mut g = vec![0.0; self.n];
        self.gradient_into(x, &mut g);
        Ok(g)
    }

    /// Largest relative deviation `‖∇H − ∇_fd H‖∞ / (1 + ‖∇H‖∞)` over `states`.
    pub fn gradient_check(&self, states: &[Vec<f64>]) -> f64 {
        let h = GRADIENT_CHECK_STEP;
        let mut worst = 0.0_f64;
        let mut g = vec![0.0; self.n];
        for x in states {
            self.gradient_into(x, &mut g);
            let mut y = x.clone();
            let mut diff = 0.0_f64;
            for i in 0..self.n {
                y[i] = x[i] + h;
                let hp = self.hamiltonian(&y);
                y[i] = x[i] - h;
                let hm = self.hamiltonian(&y);
                y[i] = x[i];
                diff = diff.max((g[i] - (hp - hm) / (2.0 * h)).abs());
            }
            let scale = 1.0 + g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            worst = worst.max(diff / scale);
        }
        worst
    }

    /// `(J − D)∇H(x)` without dimension checks.
    pub fn drift_into(&self, x: &[f64], grad: &mut [f64], out: &mut [f64]) {
        self.gradient_into(x, grad);
        for i in 0..self.n {
            let mut s = 0.0;
            for j in 0..self.n {
                s += self.drift_matrix[(i, j)] * grad[j];
            }
            out[i] = s;
        }
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x)?;
        let mut grad = vec![0.0; self.n];
        let mut out = vec![0.0; self.n];
        self.drift_into(x, &mut grad, &mut out);
        Ok(out)
    }

    /// `L(x) = H(x) − H(x₀)`; exactly zero at the equilibrium.
    pub fn controllability_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n, x)?;
        if x == self.equilibrium.as_slice() {
            return Ok(0.0);
        }
        Ok(self.hamiltonian(x) - self.energy_at_equilibrium)
    }

    /// Residual of `f·∇L + ½|∇L|²_{ggᵀ}` with `f = (J − D)∇H`, `ggᵀ = 2D`
    /// and `∇L = ∇H`. Vanishes identically up to roundoff.
    pub fn hjb_residual(&self, x: &[f64]) -> Result<f64> {
        let g = self.gradient(x)?;
        Ok(hjb_residual_parts(&g, &self.drift_matrix, &(&self.friction * 2.0)))
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x)?;
        let mut y = x.to_vec();
        normalize_with(&self.topology, &mut y);
        Ok(y)
    }
}

/// `(M∇L)·∇L + ½ ∇Lᵀ Q ∇L` for a drift matrix `M` and noise covariance `Q`.
pub fn hjb_residual_parts(grad: &[f64], drift_matrix: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> f64 {
    let n = grad.len();
    let mut transport = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            transport += grad[i] * drift_matrix[(i, j)] * grad[j];
            quad += grad[i] * noise_cov[(i, j)] * grad[j];
        }
    }
    transport + 0.5 * quad
}

/// A general additive-noise SDE `dX = f(X) dt + √ε G dW` with constant `G`.
///
/// Used for test beds outside the port-Hamiltonian family (overdamped
/// gradient dynamics).
#[derive(Clone)]
pub struct AdditiveSde {
    name: String,
    drift: VectorFn,
    noise_factor: DMatrix<f64>,
    topology: Vec<Coordinate>,
}

impl fmt::Debug for AdditiveSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdditiveSde")
            .field("name", &self.name)
            .field("noise_factor", &self.noise_factor)
            .finish()
    }
}

impl AdditiveSde {
    pub fn new(name: impl Into<String>, drift: VectorFn, noise_factor: DMatrix<f64>) -> Self {
        let n = noise_factor.nrows();
        AdditiveSde { name: name.into(), drift, noise_factor, topology: vec![Coordinate::Linear; n] }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.noise_factor.nrows()
    }

    pub fn noise_factor(&self) -> &DMatrix<f64> {
        &self.noise_factor
    }

    pub fn topology(&self) -> &[Coordinate] {
        &self.topology
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        let mut out = vec![0.0; self.dim()];
        self.drift_into(x, &mut out);
        Ok(out)
    }
}

/// An implicit set `{x : c(x) < 0}`; its boundary is `{c = 0}`.
#[derive(Clone)]
pub struct DomainSpec {
    label: String,
    level: ScalarFn,
}

impl fmt::Debug for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DomainSpec").field("label", &self.label).finish()
    }
}

impl DomainSpec {
    pub fn new(label: impl Into<String>, level: ScalarFn) -> Self {
        DomainSpec { label: label.into(), level }
    }

    /// Euclidean ball `|x_I − center| < radius` over the coordinates `indices`.
    pub fn ball(label: impl Into<String>, indices: Vec<usize>, center: Vec<f64>, radius: f64) -> Self {
        assert_eq!(indices.len(), center.len(), "ball center must match the index set");
        let level: ScalarFn = Arc::new(move |x: &[f64]| {
            let s: f64 = indices.iter().zip(&center).map(|(&i, c)| (x[i] - c) * (x[i] - c)).sum();
            s.sqrt() - radius
        });
        DomainSpec::new(label, level)
    }

    /// `{x : x_i > threshold}`.
    pub fn above(label: impl Into<String>, index: usize, threshold: f64) -> Self {
        DomainSpec::new(label, Arc::new(move |x: &[f64]| threshold - x[index]))
    }

    /// `{x : x_i < threshold}`.
    pub fn below(label: impl Into<String>, index: usize, threshold: f64) -> Self {
        DomainSpec::new(label, Arc::new(move |x: &[f64]| x[index] - threshold))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn level(&self, x: &[f64]) -> f64 {
        (self.level)(x)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.level(x) < 0.0
    }

    /// The set with negated level function: the open complement of the
    /// closure. Used to turn "hit B" into "exit when −c_B ≥ 0".
    pub fn complement(&self) -> DomainSpec {
        let inner = self.level.clone();
        DomainSpec { label: format!("not {}", self.label), level: Arc::new(move |x: &[f64]| -inner(x)) }
    }

    pub fn level_fn(&self) -> ScalarFn {
        self.level.clone()
    }
}
