//! Dense kernels for the small matrices (n ≤ 32) that show up in the linear
//! theory: cyclic Jacobi eigensolver, PSD square root, pivoted elimination,
//! and a column-pivoted Householder rank estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues below this (absolute, scaled by `max(1, ‖Q‖_max)`) are treated
/// as roundoff and clamped to zero by [`psd_sqrt`].
pub const PSD_CLAMP: f64 = 1e-12;

const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SymmetricEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Sweeps over all (p, q) pairs until the off-diagonal Frobenius norm drops
/// below `1e-13·‖M‖_F`. Only the symmetric part of `m` is used.
pub fn eigen_sym(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension { expected: n, got: m.ncols() });
    }
    if n == 0 {
        return Err(Error::Argument("empty matrix".into()));
    }
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm();
    let target = JACOBI_TOL * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= target {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &v.column(i));
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Symmetric square root of a symmetric PSD matrix.
pub fn psd_sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = eigen_sym(q)?;
    let clamp = PSD_CLAMP * max_abs(q).max(1.0);
    let mut roots = eig.values.clone();
    for lam in roots.iter_mut() {
        if *lam < -clamp {
            return Err(Error::NotPsd(*lam));
        }
        *lam = lam.max(0.0).sqrt();
    }
    let s = &eig.vectors * DMatrix::from_diagonal(&roots) * eig.vectors.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `n·ε·max|a|`.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "lu_solve needs a square matrix");
    assert_eq!(b.len(), n, "lu_solve rhs length");
    let mut m = a.clone();
    let mut x = b.clone();
    let tiny = (n as f64) * f64::EPSILON * max_abs(a);
    for k in 0..n {
        let (piv, big) = (k..n)
            .map(|i| (i, m[(i, k)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if big <= tiny || big == 0.0 {
            return None;
        }
        if piv != k {
            m.swap_rows(piv, k);
            x.swap_rows(piv, k);
        }
        let d = m[(k, k)];
        for i in k + 1..n {
            let f = m[(i, k)] / d;
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= f * m[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for j in k + 1..n {
            s -= m[(k, j)] * x[j];
        }
        x[k] = s / m[(k, k)];
    }
    Some(x)
}

/// Numerical rank via Householder QR with column pivoting.
///
/// A diagonal entry of R counts when it exceeds `n·2⁻⁵²·(largest column norm)`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return 0;
    }
    let mut a = m.clone();
    let largest = (0..cols).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let tol = (rows.max(cols) as f64) * f64::EPSILON * largest;
    let steps = rows.min(cols);
    let mut r = 0;
    for k in 0..steps {
        // pivot: remaining column with largest trailing norm
        let (piv, norm) = (k..cols)
            .map(|j| (j, a.view((k, j), (rows - k, 1)).norm()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if norm <= tol {
            break;
        }
        a.swap_columns(k, piv);
        let mut v: DVector<f64> = a.view((k, k), (rows - k, 1)).column(0).into_owned();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            for j in k..cols {
                let dot: f64 = (0..rows - k).map(|i| v[i] * a[(k + i, j)]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in 0..rows - k {
                    a[(k + i, j)] -= f * v[i];
                }
            }
        }
        if a[(k, k)].abs() > tol {
            r += 1;
        } else {
            break;
        }
    }
    r
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}
