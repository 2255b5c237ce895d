//! Linear small-noise theory: linearization about an equilibrium, the
//! Lyapunov equation for the controllability Gramian, and the Hurwitz and
//! Kalman-rank checks.

pub mod kernel;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SystemSpec;
use kernel::{eigen_sym, kron, lu_solve, max_abs, psd_sqrt};

pub use kernel::SymmetricEigen;

pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-10;
pub const HESSIAN_ASYMMETRY_WARN: f64 = 1e-4;
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Linear SDE `dX = A X dt + √ε C dW`, with its Gramian once solved.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    gramian: Option<DMatrix<f64>>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension { expected: n, got: a.ncols() });
        }
        if c.nrows() != n {
            return Err(Error::Dimension { expected: n, got: c.nrows() });
        }
        Ok(LinearModel { a, c, gramian: None })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `C Cᵀ`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }

    pub fn gramian(&self) -> Option<&DMatrix<f64>> {
        self.gramian.as_ref()
    }

    /// Solves and caches `AΣ + ΣAᵀ = −CCᵀ`.
    pub fn solve_gramian(&mut self) -> Result<&DMatrix<f64>> {
        if self.gramian.is_none() {
            let sigma = solve_lyapunov(&self.a, &self.noise_covariance())?;
            self.gramian = Some(sigma);
        }
        Ok(self.gramian.as_ref().unwrap())
    }

    pub fn with_gramian(mut self) -> Result<Self> {
        self.solve_gramian()?;
        Ok(self)
    }

    /// `‖AΣ + ΣAᵀ + CCᵀ‖_max` for a candidate `Σ`.
    pub fn lyapunov_residual(&self, sigma: &DMatrix<f64>) -> f64 {
        lyapunov_residual(&self.a, &self.noise_covariance(), sigma)
    }
}

pub fn lyapunov_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    max_abs(&(a * sigma + sigma * a.transpose() + q))
}

/// Result of [`linearize`].
#[derive(Debug, Clone)]
pub struct Linearization {
    pub model: LinearModel,
    /// Symmetrized Hessian of `H` at the expansion point.
    pub hessian: DMatrix<f64>,
    /// `‖Hess − Hessᵀ‖_max` before symmetrization.
    pub asymmetry: f64,
    pub warning: Option<String>,
}

/// Central-difference Hessian of `H` built from the analytic gradient.
pub fn hessian(sys: &SystemSpec, x: &[f64], fd_step: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = sys.dim();
    if x.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len() });
    }
    if !(fd_step > 0.0) {
        return Err(Error::Argument(format!("fd_step must be positive, got {fd_step}")));
    }
    let mut raw = DMatrix::zeros(n, n);
    let mut y = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        y[j] = x[j] + fd_step;
        sys.gradient_into(&y, &mut gp);
        y[j] = x[j] - fd_step;
        sys.gradient_into(&y, &mut gm);
        y[j] = x[j];
        for i in 0..n {
            raw[(i, j)] = (gp[i] - gm[i]) / (2.0 * fd_step);
        }
    }
    let asymmetry = max_abs(&(&raw - raw.transpose()));
    Ok(((&raw + raw.transpose()) * 0.5, asymmetry))
}

/// `A = (J − D)·Hess H(x_eq)`, `C = √(2D)`.
pub fn linearize(sys: &SystemSpec, x_eq: &[f64], fd_step: f64) -> Result<Linearization> {
    let (hess, asymmetry) = hessian(sys, x_eq, fd_step)?;
    let warning = (asymmetry > HESSIAN_ASYMMETRY_WARN)
        .then(|| format!("finite-difference Hessian asymmetry {asymmetry:e} exceeds {HESSIAN_ASYMMETRY_WARN:e}"));
    let a = sys.drift_matrix() * &hess;
    let c = psd_sqrt(&(sys.friction() * 2.0))?;
    Ok(Linearization { model: LinearModel::new(a, c)?, hessian: hess, asymmetry, warning })
}

/// Solves `AX + XAᵀ = −Q` through the vectorized Kronecker system; `None`
/// when that system is singular.
fn kronecker_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = kron(&eye, a) + kron(a, &eye);
    // column-major vec
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = lu_solve(&k, &rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some((&x + x.transpose()) * 0.5)
}

/// Gramian `Σ` with `AΣ + ΣAᵀ = −Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension { expected: n, got: a.ncols() });
    }
    if q.shape() != (n, n) {
        return Err(Error::Dimension { expected: n, got: q.nrows() });
    }
    if max_abs(&(q - q.transpose())) > 1e-12 * max_abs(q).max(1.0) {
        return Err(Error::Argument("Q must be symmetric".into()));
    }
    let sigma = kronecker_solve(a, q).ok_or(Error::IllPosed)?;
    if !hurwitz_check(a) {
        return Err(Error::NotHurwitz);
    }
    Ok(sigma)
}

/// True iff `AᵀP + PA = −I` has a symmetric positive-definite solution,
/// i.e. every eigenvalue of `A` has negative real part.
pub fn hurwitz_check(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return false;
    }
    match kronecker_solve(&a.transpose(), &DMatrix::identity(n, n)) {
        Some(p) => Cholesky::new(p).is_some(),
        None => false,
    }
}

/// `r² / (2 λ_max(Σ))`: the infimum of `½ yᵀΣ⁻¹y` over the sphere `|y| = r`.
pub fn sphere_infimum(sigma: &DMatrix<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Argument(format!("radius must be positive, got {r}")));
    }
    let eig = eigen_sym(sigma)?;
    if eig.min() <= 0.0 {
        return Err(Error::NotPd(eig.min()));
    }
    Ok(r * r / (2.0 * eig.max()))
}

/// Rank of the Kalman matrix `[C | AC | … | Aⁿ⁻¹C]`.
pub fn controllability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = c.ncols();
    let mut kalman = DMatrix::zeros(n, n * m);
    let mut block = c.clone();
    for k in 0..n {
        kalman.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    kernel::rank(&kalman)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lyapunov_small_examples() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let s = solve_lyapunov(&a, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert_abs_diff_eq!(s, DMatrix::identity(2, 2), epsilon = 1e-14);

        let s = solve_lyapunov(&DMatrix::from_element(1, 1, -2.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_errors() {
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(solve_lyapunov(&rot, &DMatrix::identity(2, 2)), Err(Error::IllPosed));
        let unstable = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        assert_eq!(solve_lyapunov(&unstable, &DMatrix::identity(2, 2)), Err(Error::NotHurwitz));
    }

    #[test]
    fn hurwitz_examples() {
        assert!(hurwitz_check(&-DMatrix::<f64>::identity(3, 3)));
        assert!(!hurwitz_check(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])));
        assert!(!hurwitz_check(&DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -1.0, 0.1])));
        assert!(hurwitz_check(&DMatrix::from_row_slice(2, 2, &[-0.1, 5.0, -5.0, -0.1])));
    }

    #[test]
    fn sphere_infimum_examples() {
        assert_abs_diff_eq!(sphere_infimum(&DMatrix::identity(3, 3), 1.0).unwrap(), 0.5);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        assert_abs_diff_eq!(sphere_infimum(&s, 2.0).unwrap(), 1.0, epsilon = 1e-15);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(sphere_infimum(&bad, 1.0), Err(Error::NotPd(_))));
        assert!(matches!(sphere_infimum(&DMatrix::identity(2, 2), 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn kalman_rank_examples() {
        let a = -DMatrix::<f64>::identity(3, 3);
        assert_eq!(controllability_rank(&a, &DMatrix::identity(3, 3)), 3);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let c = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(controllability_rank(&a, &c), 1);
    }
}
