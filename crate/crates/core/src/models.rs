//! Built-in models: the planar double pendulum on 𝕋²×ℝ², its quadratic
//! approximation, the 1-D Ornstein–Uhlenbeck process, and the 1-D symmetric
//! double well, plus the catalog used by the CLI.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::model::{AdditiveSde, Coordinate, DomainSpec, ScalarFn, SystemSpec, VectorFn};

/// `(J, D)` with `J = [[0, I], [−I, 0]]` and `D = diag(0, R)`.
pub fn canonical_structure(d: usize, r: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = 2 * d;
    let mut j = DMatrix::zeros(n, n);
    let mut f = DMatrix::zeros(n, n);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    f.view_mut((d, d), (d, d)).copy_from(r);
    (j, f)
}

/// Inverse mass matrix `M⁻¹(q)` of the pendulum; depends on `q₂` only.
pub fn inverse_mass(q2: f64) -> [[f64; 2]; 2] {
    let c = q2.cos();
    let k = 1.0 / (2.0 - c);
    [[k, -k * (1.0 + c)], [-k * (1.0 + c), k * (2.0 + 3.0 * c)]]
}

/// `log det M(q) = −log det M⁻¹(q)`.
pub fn log_det_mass(q2: f64) -> f64 {
    let m = inverse_mass(q2);
    -(m[0][0] * m[1][1] - m[0][1] * m[1][0]).ln()
}

/// `Φ(q) = ½|q|² − 20 cos q₁ − 10 cos(q₁ + q₂)`.
pub fn pendulum_potential(q: &[f64]) -> f64 {
    0.5 * (q[0] * q[0] + q[1] * q[1]) - 20.0 * q[0].cos() - 10.0 * (q[0] + q[1]).cos()
}

fn pendulum_hamiltonian(x: &[f64]) -> f64 {
    let m = inverse_mass(x[1]);
    let (p1, p2) = (x[2], x[3]);
    0.5 * (m[0][0] * p1 * p1 + 2.0 * m[0][1] * p1 * p2 + m[1][1] * p2 * p2) + pendulum_potential(x)
}

fn pendulum_gradient(x: &[f64], out: &mut [f64]) {
    let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
    let (s, c) = q2.sin_cos();
    let k = 1.0 / (2.0 - c);
    let quad = p1 * p1 - 2.0 * (1.0 + c) * p1 * p2 + (2.0 + 3.0 * c) * p2 * p2;
    let dquad = 2.0 * s * p1 * p2 - 3.0 * s * p2 * p2;
    let s12 = (q1 + q2).sin();
    out[0] = q1 + 20.0 * q1.sin() + 10.0 * s12;
    out[1] = q2 + 10.0 * s12 + 0.5 * (-s * k * k * quad + k * dquad);
    out[2] = k * (p1 - (1.0 + c) * p2);
    out[3] = k * (-(1.0 + c) * p1 + (2.0 + 3.0 * c) * p2);
}

/// Planar double pendulum with massless shafts, unit masses, stiffnesses and
/// lengths, and g = 10. State `(q₁, q₂, p₁, p₂)`, angles on the torus.
pub fn double_pendulum() -> SystemSpec {
    let (j, d) = canonical_structure(2, &DMatrix::identity(2, 2));
    let topology = vec![Coordinate::Angular, Coordinate::Angular, Coordinate::Linear, Coordinate::Linear];
    SystemSpec::new(
        "double-pendulum",
        Arc::new(pendulum_hamiltonian),
        Arc::new(pendulum_gradient),
        j,
        d,
        topology,
        vec![0.0; 4],
    )
    .expect("double pendulum satisfies the model invariants")
}

/// `(D₁, D₂)`: `|(M⁻¹(q)p, q)| < 1` and `|q| < 0.5`.
pub fn double_pendulum_domains() -> (DomainSpec, DomainSpec) {
    let d1 = DomainSpec::new(
        "D1",
        Arc::new(|x: &[f64]| {
            let m = inverse_mass(x[1]);
            let v1 = m[0][0] * x[2] + m[0][1] * x[3];
            let v2 = m[1][0] * x[2] + m[1][1] * x[3];
            (v1 * v1 + v2 * v2 + x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0
        }),
    );
    let d2 = DomainSpec::ball("D2", vec![0, 1], vec![0.0, 0.0], 0.5);
    (d1, d2)
}

/// Momentum block `S = M⁻¹(0)`.
pub fn pendulum_s() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 5.0])
}

/// Position block: the Hessian of `Φ` at 0. Its off-diagonal is `+10`; the
/// matrix with `−10` is similar to it under `diag(1, −1)` and has the same
/// spectrum.
pub fn pendulum_n() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[31.0, 10.0, 10.0, 11.0])
}

/// Quadratic approximation `Ĥ = ½pᵀSp + ½qᵀNq` of the pendulum about the
/// origin (additive constant dropped), and its linear model.
pub fn linearized_double_pendulum() -> (SystemSpec, LinearModel) {
    let s = pendulum_s();
    let n = pendulum_n();
    let (j, d) = canonical_structure(2, &DMatrix::identity(2, 2));
    let (s1, n1) = (s.clone(), n.clone());
    let h: ScalarFn = Arc::new(move |x: &[f64]| {
        let mut e = 0.0;
        for i in 0..2 {
            for k in 0..2 {
                e += 0.5 * (n1[(i, k)] * x[i] * x[k] + s1[(i, k)] * x[2 + i] * x[2 + k]);
            }
        }
        e
    });
    let (s2, n2) = (s.clone(), n.clone());
    let g: VectorFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        for i in 0..2 {
            out[i] = n2[(i, 0)] * x[0] + n2[(i, 1)] * x[1];
            out[2 + i] = s2[(i, 0)] * x[2] + s2[(i, 1)] * x[3];
        }
    });
    let sys = SystemSpec::new("double-pendulum-linear", h, g, j.clone(), d.clone(), vec![Coordinate::Linear; 4], vec![0.0; 4])
        .expect("linearized pendulum satisfies the model invariants");

    let mut hess = DMatrix::zeros(4, 4);
    hess.view_mut((0, 0), (2, 2)).copy_from(&n);
    hess.view_mut((2, 2), (2, 2)).copy_from(&s);
    let a = (&j - &d) * hess;
    let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, 0.0, 2f64.sqrt(), 2f64.sqrt()]));
    let lin = LinearModel::new(a, c).expect("consistent shapes");
    (sys, lin)
}

/// `(D₁, D₂)` for the quadratic model, with `M⁻¹` frozen at `S`.
pub fn linearized_domains() -> (DomainSpec, DomainSpec) {
    let d1 = DomainSpec::new(
        "D1",
        Arc::new(|x: &[f64]| {
            let v1 = x[2] - 2.0 * x[3];
            let v2 = -2.0 * x[2] + 5.0 * x[3];
            (v1 * v1 + v2 * v2 + x[0] * x[0] + x[1] * x[1]).sqrt() - 1.0
        }),
    );
    (d1, DomainSpec::ball("D2", vec![0, 1], vec![0.0, 0.0], 0.5))
}

/// `dX = −aX dt + √ε dW`.
pub fn ou_1d(a: f64) -> Result<LinearModel> {
    if !(a > 0.0) {
        return Err(Error::Argument(format!("OU rate must be positive, got {a}")));
    }
    LinearModel::new(DMatrix::from_element(1, 1, -a), DMatrix::from_element(1, 1, 1.0))
}

/// `Φ(x) = (x² − 1)²/4`.
pub fn double_well_potential(x: f64) -> f64 {
    let y = x * x - 1.0;
    0.25 * y * y
}

/// Overdamped gradient dynamics `dX = −Φ′(X) dt + √ε dW` in the symmetric
/// double well.
pub fn double_well_1d() -> AdditiveSde {
    AdditiveSde::new(
        "double-well",
        Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] - x[0] * x[0] * x[0]),
        DMatrix::from_element(1, 1, 1.0),
    )
}

/// Any of the simulable model families.
#[derive(Debug, Clone)]
pub enum Model {
    Hamiltonian(SystemSpec),
    Linear(LinearModel),
    Additive(AdditiveSde),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Hamiltonian(s) => s.dim(),
            Model::Linear(l) => l.dim(),
            Model::Additive(a) => a.dim(),
        }
    }

    /// Reference (equilibrium) state.
    pub fn reference_state(&self) -> Vec<f64> {
        match self {
            Model::Hamiltonian(s) => s.equilibrium().to_vec(),
            Model::Linear(l) => vec![0.0; l.dim()],
            Model::Additive(a) if a.name() == "double-well" => vec![-1.0],
            Model::Additive(a) => vec![0.0; a.dim()],
        }
    }

    pub fn as_system(&self) -> Option<&SystemSpec> {
        match self {
            Model::Hamiltonian(s) => Some(s),
            _ => None,
        }
    }
}

/// A catalog entry: the model plus its named default domains.
#[derive(Debug, Clone)]
pub struct ModelCatalogEntry {
    pub name: String,
    pub model: Model,
    /// Quadratic companion, when one exists.
    pub linear: Option<LinearModel>,
    pub domains: Vec<DomainSpec>,
}

impl ModelCatalogEntry {
    pub fn domain(&self, label: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.label() == label)
    }
}

#[derive(Debug, Deserialize)]
struct LinearModelFile {
    a: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("matrix `{what}` must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

/// Reads a linear model from TOML:
///
/// ```toml
/// a = [[-1.0, 0.0], [0.0, -2.0]]
/// c = [[1.0], [0.0]]
/// ```
pub fn load_linear_model(path: &Path) -> Result<LinearModel> {
    let text = std::fs::read_to_string(path)?;
    parse_linear_model(&text)
}

pub fn parse_linear_model(text: &str) -> Result<LinearModel> {
    let f: LinearModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    LinearModel::new(rows_to_matrix(&f.a, "a")?, rows_to_matrix(&f.c, "c")?)
}

/// Resolves a model name:
/// `double-pendulum | double-pendulum-linear | ou:a=<v> | double-well | file:<path>`.
pub fn lookup(name: &str) -> Result<ModelCatalogEntry> {
    let entry = match name {
        "double-pendulum" => {
            let (d1, d2) = double_pendulum_domains();
            let (_, lin) = linearized_double_pendulum();
            ModelCatalogEntry {
                name: name.into(),
                model: Model::Hamiltonian(double_pendulum()),
                linear: Some(lin),
                domains: vec![d1, d2],
            }
        }
        "double-pendulum-linear" => {
            let (sys, lin) = linearized_double_pendulum();
            let (d1, d2) = linearized_domains();
            ModelCatalogEntry { name: name.into(), model: Model::Hamiltonian(sys), linear: Some(lin), domains: vec![d1, d2] }
        }
        "double-well" => ModelCatalogEntry {
            name: name.into(),
            model: Model::Additive(double_well_1d()),
            linear: None,
            domains: vec![DomainSpec::below("left", 0, 0.0), DomainSpec::above("right", 0, 0.0)],
        },
        _ => {
            if let Some(rest) = name.strip_prefix("ou:") {
                let a = rest
                    .strip_prefix("a=")
                    .ok_or_else(|| Error::Parse(format!("expected ou:a=<value>, got `{name}`")))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("OU rate: {e}")))?;
                let lin = ou_1d(a)?;
                ModelCatalogEntry {
                    name: name.into(),
                    model: Model::Linear(lin.clone()),
                    linear: Some(lin),
                    domains: vec![DomainSpec::ball("unit", vec![0], vec![0.0], 1.0)],
                }
            } else if let Some(path) = name.strip_prefix("file:") {
                let lin = load_linear_model(Path::new(path))?;
                ModelCatalogEntry { name: name.into(), model: Model::Linear(lin.clone()), linear: Some(lin), domains: vec![] }
            } else {
                return Err(Error::Argument(format!("unknown model `{name}`")));
            }
        }
    };
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::{linearize, DEFAULT_FD_STEP};
    use approx::assert_abs_diff_eq;

    #[test]
    fn pendulum_energy_and_mass() {
        let sys = double_pendulum();
        assert_abs_diff_eq!(sys.hamiltonian(&[0.0; 4]), -30.0, epsilon = 1e-14);
        let m = inverse_mass(0.0);
        assert_eq!(m, [[1.0, -2.0], [-2.0, 5.0]]);
        assert_abs_diff_eq!(m[0][0] * m[1][1] - m[0][1] * m[1][0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(log_det_mass(0.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pendulum_gradient_matches_differences_on_wide_box() {
        let sys = double_pendulum();
        let mut states = Vec::new();
        for a in [-3.0, -1.2, 0.4, 2.9] {
            for b in [-2.5, 0.1, 3.1] {
                states.push(vec![a, b, 0.7 * b - 1.0, 2.0 - a]);
            }
        }
        assert!(sys.gradient_check(&states) < 1e-6);
    }

    #[test]
    fn pendulum_domains() {
        let (d1, d2) = double_pendulum_domains();
        assert_eq!(d2.level(&[0.0; 4]), -0.5);
        assert_eq!(d1.level(&[0.0; 4]), -1.0);
        assert_abs_diff_eq!(d1.level(&[0.0, 0.0, 1.0, 0.0]), 5f64.sqrt() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn linearized_agrees_with_fd_hessian() {
        let lin = linearize(&double_pendulum(), &[0.0; 4], DEFAULT_FD_STEP).unwrap();
        assert!(lin.warning.is_none());
        let h = &lin.hessian;
        assert_abs_diff_eq!(h.view((0, 0), (2, 2)).into_owned(), pendulum_n(), epsilon = 1e-6);
        assert_abs_diff_eq!(h.view((2, 2), (2, 2)).into_owned(), pendulum_s(), epsilon = 1e-6);
        let (_, model) = linearized_double_pendulum();
        assert_abs_diff_eq!(lin.model.a, model.a, epsilon = 1e-6);
        assert_abs_diff_eq!(lin.model.c, model.c, epsilon = 1e-15);
    }

    #[test]
    fn linearized_energy() {
        let (sys, _) = linearized_double_pendulum();
        assert_abs_diff_eq!(sys.hamiltonian(&[0.5, 0.0, 0.0, 0.0]), 3.875, epsilon = 1e-15);
        assert_abs_diff_eq!(sys.controllability_value(&[0.5, 0.0, 0.0, 0.0]).unwrap(), 3.875, epsilon = 1e-15);
    }

    #[test]
    fn double_well_critical_points() {
        let dw = double_well_1d();
        assert_eq!(dw.drift(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(dw.drift(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(dw.drift(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(double_well_potential(0.0) - double_well_potential(1.0), 0.25);
    }

    #[test]
    fn ou_rejects_nonpositive_rate() {
        assert!(ou_1d(0.0).is_err());
        assert!(ou_1d(-1.0).is_err());
        let mut ou = ou_1d(2.0).unwrap();
        assert_abs_diff_eq!(ou.solve_gramian().unwrap()[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn catalog_lookup() {
        assert!(lookup("double-pendulum").unwrap().domain("D2").is_some());
        assert!(matches!(lookup("ou:a=2").unwrap().model, Model::Linear(_)));
        assert!(lookup("ou:b=2").is_err());
        assert!(lookup("nonsense").is_err());
        let m = parse_linear_model("a = [[-1.0, 0.0], [0.0, -2.0]]\nc = [[1.0], [0.0]]\n").unwrap();
        assert_eq!(m.c.shape(), (2, 1));
        assert!(parse_linear_model("a = [[-1.0, 0.0], [0.0]]\nc = [[1.0]]").is_err());
    }
}
