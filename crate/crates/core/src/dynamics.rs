//! Euler–Maruyama time stepping of additive-noise SDEs
//! `dX = f(X) dt + √ε G dW`, with per-trial reproducible noise streams and
//! first-exit detection.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::model::{normalize_with, AdditiveSde, Coordinate, DomainSpec, SystemSpec};
use crate::models::Model;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 1e4;
pub const MAX_STEPS: f64 = 1e9;

/// Anything that can be stepped: drift, constant noise factor and topology.
pub trait Sde: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`; `scratch` has length `dim()`.
    fn drift_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]);

    /// `G` (n×m); the diffusion at noise level ε is `√ε·G`.
    fn noise_factor(&self) -> &DMatrix<f64>;

    fn topology(&self) -> Option<&[Coordinate]> {
        None
    }

    fn normalize_in_place(&self, x: &mut [f64]) {
        if let Some(t) = self.topology() {
            normalize_with(t, x);
        }
    }
}

impl Sde for SystemSpec {
    fn dim(&self) -> usize {
        SystemSpec::dim(self)
    }

    fn drift_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        SystemSpec::drift_into(self, x, scratch, out)
    }

    fn noise_factor(&self) -> &DMatrix<f64> {
        SystemSpec::noise_factor(self)
    }

    fn topology(&self) -> Option<&[Coordinate]> {
        Some(SystemSpec::topology(self))
    }
}

impl Sde for LinearModel {
    fn dim(&self) -> usize {
        LinearModel::dim(self)
    }

    fn drift_into(&self, x: &[f64], _scratch: &mut [f64], out: &mut [f64]) {
        let n = self.a.nrows();
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.a[(i, j)] * x[j];
            }
            out[i] = s;
        }
    }

    fn noise_factor(&self) -> &DMatrix<f64> {
        &self.c
    }
}

impl Sde for AdditiveSde {
    fn dim(&self) -> usize {
        AdditiveSde::dim(self)
    }

    fn drift_into(&self, x: &[f64], _scratch: &mut [f64], out: &mut [f64]) {
        AdditiveSde::drift_into(self, x, out)
    }

    fn noise_factor(&self) -> &DMatrix<f64> {
        AdditiveSde::noise_factor(self)
    }

    fn topology(&self) -> Option<&[Coordinate]> {
        Some(AdditiveSde::topology(self))
    }
}

impl Sde for Model {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn drift_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        match self {
            Model::Hamiltonian(s) => Sde::drift_into(s, x, scratch, out),
            Model::Linear(l) => Sde::drift_into(l, x, scratch, out),
            Model::Additive(a) => Sde::drift_into(a, x, scratch, out),
        }
    }

    fn noise_factor(&self) -> &DMatrix<f64> {
        match self {
            Model::Hamiltonian(s) => Sde::noise_factor(s),
            Model::Linear(l) => Sde::noise_factor(l),
            Model::Additive(a) => Sde::noise_factor(a),
        }
    }

    fn topology(&self) -> Option<&[Coordinate]> {
        match self {
            Model::Hamiltonian(s) => Sde::topology(s),
            Model::Linear(l) => Sde::topology(l),
            Model::Additive(a) => Sde::topology(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_max: f64,
    pub scheme: Scheme,
    /// Refine exit times by linear interpolation of the level function.
    pub interpolate_crossing: bool,
    /// Between grid points, also exit with the Brownian-bridge probability
    /// `exp(−2 c₀ c₁ / (ε h |Gᵀ∇c|²))` of an unseen crossing.
    pub bridge_crossing: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { dt: DEFAULT_DT, t_max: DEFAULT_T_MAX, scheme: Scheme::EulerMaruyama, interpolate_crossing: false, bridge_crossing: false }
    }
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        IntegratorConfig { dt, t_max, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Argument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(Error::Argument(format!("t_max must be non-negative, got {}", self.t_max)));
        }
        let steps = self.t_max / self.dt;
        if steps > MAX_STEPS {
            return Err(Error::Budget { steps, limit: MAX_STEPS });
        }
        Ok(())
    }

    /// Number of steps to reach `t_max`; the last one may be shorter than `dt`.
    pub fn n_steps(&self) -> u64 {
        let r = self.t_max / self.dt;
        let k = r.round();
        if (r - k).abs() <= 1e-9 * r.max(1.0) {
            k as u64
        } else {
            r.ceil() as u64
        }
    }

    /// Time after `k` steps.
    fn time_at(&self, k: u64, n_steps: u64) -> f64 {
        if k >= n_steps {
            self.t_max
        } else {
            k as f64 * self.dt
        }
    }
}

/// Counter-based Gaussian stream keyed by `(master_seed, stream_id)`.
///
/// Uniforms come from ChaCha8 with the stream id selecting an independent
/// keystream; Gaussians are produced in pairs by Box–Muller.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NoiseStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        NoiseStream { master_seed, stream_id, rng, spare: None }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on (0, 1].
    pub fn open_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.open_uniform();
        let u2 = self.open_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_gaussian();
        }
    }
}

/// Euler–Maruyama stepper with preallocated buffers.
pub struct Stepper<'a, S: Sde + ?Sized> {
    sde: &'a S,
    dt: f64,
    /// `√(ε·dt)·G`, columns that are identically zero dropped from the product.
    scaled_noise: DMatrix<f64>,
    sqrt_eps: f64,
    active_cols: Vec<usize>,
    scratch: Vec<f64>,
    f: Vec<f64>,
    xi: Vec<f64>,
}

impl<'a, S: Sde + ?Sized> Stepper<'a, S> {
    pub fn new(sde: &'a S, eps: f64, dt: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Argument(format!("noise level must be non-negative, got {eps}")));
        }
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("dt must be positive, got {dt}")));
        }
        let g = sde.noise_factor();
        let n = sde.dim();
        if g.nrows() != n {
            return Err(Error::Dimension { expected: n, got: g.nrows() });
        }
        let active_cols = (0..g.ncols()).filter(|&j| g.column(j).iter().any(|v| *v != 0.0)).collect();
        Ok(Stepper {
            sde,
            dt,
            scaled_noise: g.clone(),
            sqrt_eps: eps.sqrt(),
            active_cols,
            scratch: vec![0.0; n],
            f: vec![0.0; n],
            xi: vec![0.0; g.ncols()],
        })
    }

    /// One step of size `h` (normally `dt`), in place. `step` is reported on
    /// divergence.
    pub fn advance(&mut self, x: &mut [f64], h: f64, noise: &mut NoiseStream, step: u64) -> Result<()> {
        self.sde.drift_into(x, &mut self.scratch, &mut self.f);
        noise.fill(&mut self.xi);
        let amp = self.sqrt_eps * h.sqrt();
        let n = x.len();
        for i in 0..n {
            let mut w = 0.0;
            for &j in &self.active_cols {
                w += self.scaled_noise[(i, j)] * self.xi[j];
            }
            x[i] += h * self.f[i] + amp * w;
        }
        self.sde.normalize_in_place(x);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        Ok(())
    }

    pub fn step(&mut self, x: &mut [f64], noise: &mut NoiseStream, step: u64) -> Result<()> {
        self.advance(x, self.dt, noise, step)
    }
}

/// `normalize(x + dt·f(x) + √dt·√ε·G·ξ)` with `ξ` drawn from `noise`.
pub fn step_langevin<S: Sde + ?Sized>(sde: &S, x: &[f64], eps: f64, dt: f64, noise: &mut NoiseStream) -> Result<Vec<f64>> {
    if x.len() != sde.dim() {
        return Err(Error::Dimension { expected: sde.dim(), got: x.len() });
    }
    let mut stepper = Stepper::new(sde, eps, dt)?;
    let mut y = x.to_vec();
    stepper.step(&mut y, noise, 1)?;
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitLabel {
    /// Index into the exit-set list.
    Set(usize),
    Timeout,
}

/// One trial's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingResult {
    pub tau: f64,
    pub exit_state: Vec<f64>,
    pub label: ExitLabel,
}

impl HittingResult {
    pub fn timed_out(&self) -> bool {
        self.label == ExitLabel::Timeout
    }
}

/// Runs until the first time any exit set has `c(x) ≥ 0`, or `t_max`.
pub fn simulate_until<S: Sde + ?Sized>(
    sde: &S,
    x0: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
    exit_sets: &[DomainSpec],
    noise: &mut NoiseStream,
) -> Result<HittingResult> {
    cfg.validate()?;
    let n = sde.dim();
    if x0.len() != n {
        return Err(Error::Dimension { expected: n, got: x0.len() });
    }
    let mut x = x0.to_vec();
    sde.normalize_in_place(&mut x);

    let mut prev: Vec<f64> = exit_sets.iter().map(|s| s.level(&x)).collect();
    if let Some(i) = prev.iter().position(|&c| c >= 0.0) {
        return Ok(HittingResult { tau: 0.0, exit_state: x, label: ExitLabel::Set(i) });
    }

    let mut stepper = Stepper::new(sde, eps, cfg.dt)?;
    let mut probe = vec![0.0; 2 * n];
    let n_steps = cfg.n_steps();
    let mut t_prev = 0.0;
    for k in 1..=n_steps {
        let t = cfg.time_at(k, n_steps);
        stepper.advance(&mut x, t - t_prev, noise, k)?;
        for (i, set) in exit_sets.iter().enumerate() {
            let c = set.level(&x);
            if c >= 0.0 {
                let tau = if cfg.interpolate_crossing && c > prev[i] {
                    t_prev + (t - t_prev) * (-prev[i] / (c - prev[i]))
                } else {
                    t
                };
                return Ok(HittingResult { tau, exit_state: x, label: ExitLabel::Set(i) });
            }
            if cfg.bridge_crossing && eps > 0.0 && bridge_hit(sde, set, &x, prev[i], c, eps, t - t_prev, &mut probe, noise) {
                let tau = if cfg.interpolate_crossing { 0.5 * (t_prev + t) } else { t };
                return Ok(HittingResult { tau, exit_state: x, label: ExitLabel::Set(i) });
            }
            prev[i] = c;
        }
        t_prev = t;
    }
    Ok(HittingResult { tau: cfg.t_max, exit_state: x, label: ExitLabel::Timeout })
}

/// Decides whether the path crossed `set`'s boundary between two interior
/// grid states, treating the level function as locally affine. A uniform is
/// drawn only when the crossing probability is not negligible.
#[allow(clippy::too_many_arguments)]
fn bridge_hit<S: Sde + ?Sized>(
    sde: &S,
    set: &DomainSpec,
    x: &[f64],
    c0: f64,
    c1: f64,
    eps: f64,
    h: f64,
    probe: &mut [f64],
    noise: &mut NoiseStream,
) -> bool {
    const FD: f64 = 1e-6;
    const NEGLIGIBLE: f64 = 40.0;
    let g = sde.noise_factor();
    let (probe, grad) = probe.split_at_mut(x.len());
    probe.copy_from_slice(x);
    for j in 0..x.len() {
        let s = FD * x[j].abs().max(1.0);
        probe[j] = x[j] + s;
        let up = set.level(probe);
        probe[j] = x[j] - s;
        let dn = set.level(probe);
        probe[j] = x[j];
        grad[j] = (up - dn) / (2.0 * s);
    }
    let mut var = 0.0;
    for col in g.column_iter() {
        let w: f64 = col.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
        var += w * w;
    }
    var *= eps * h;
    if !(var > 0.0) {
        return false;
    }
    let exponent = 2.0 * c0 * c1 / var;
    if exponent > NEGLIGIBLE {
        return false;
    }
    noise.open_uniform() < (-exponent).exp()
}

/// Sampled path with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stride: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x1,...,xn`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).map(fmt_f64).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Records every `stride`-th state, starting with `x0` at `t = 0`.
pub fn sample_trajectory<S: Sde + ?Sized>(
    sde: &S,
    x0: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
    noise: &mut NoiseStream,
    stride: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let n = sde.dim();
    if x0.len() != n {
        return Err(Error::Dimension { expected: n, got: x0.len() });
    }
    let mut x = x0.to_vec();
    sde.normalize_in_place(&mut x);
    let n_steps = cfg.n_steps();
    let cap = (n_steps / stride as u64 + 1) as usize;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    times.push(0.0);
    states.push(x.clone());
    let mut stepper = Stepper::new(sde, eps, cfg.dt)?;
    let mut t_prev = 0.0;
    for k in 1..=n_steps {
        let t = cfg.time_at(k, n_steps);
        stepper.advance(&mut x, t - t_prev, noise, k)?;
        if k % stride as u64 == 0 {
            times.push(t);
            states.push(x.clone());
        }
        t_prev = t;
    }
    Ok(Trajectory { times, states, stride })
}

/// Runs `n` independent trials on the current rayon pool, returning results
/// in trial-index order. The first failing trial (by index) is reported.
pub fn run_trials<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(&f).collect();
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => return Err(Error::Trial { trial: i as u64, source: Box::new(e) }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{double_pendulum, ou_1d};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ou_deterministic_part() {
        let ou = ou_1d(1.0).unwrap();
        let mut noise = NoiseStream::new(1, 0);
        let y = step_langevin(&ou, &[1.0], 0.0, 0.01, &mut noise).unwrap();
        assert_abs_diff_eq!(y[0], 0.99, epsilon = 1e-15);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = NoiseStream::new(42, 3);
        let mut b = NoiseStream::new(42, 3);
        let mut c = NoiseStream::new(42, 4);
        let va: Vec<f64> = (0..64).map(|_| a.next_gaussian()).collect();
        let vb: Vec<f64> = (0..64).map(|_| b.next_gaussian()).collect();
        let vc: Vec<f64> = (0..64).map(|_| c.next_gaussian()).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }

    #[test]
    fn gaussian_moments() {
        let mut s = NoiseStream::new(7, 0);
        let n = 200_000;
        let v: Vec<f64> = (0..n).map(|_| s.next_gaussian()).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn pendulum_step_is_bit_reproducible() {
        let sys = double_pendulum();
        let x = [0.1, -0.2, 0.3, 0.4];
        let a = step_langevin(&sys, &x, 1.0, 1e-3, &mut NoiseStream::new(9, 2)).unwrap();
        let b = step_langevin(&sys, &x, 1.0, 1e-3, &mut NoiseStream::new(9, 2)).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::new(0.0, 1.0).validate().is_err());
        assert!(IntegratorConfig::new(1e-3, -1.0).validate().is_err());
        assert!(matches!(IntegratorConfig::new(1e-12, 1e4).validate(), Err(Error::Budget { .. })));
        assert_eq!(IntegratorConfig::new(1e-3, 1.0).n_steps(), 1000);
        assert_eq!(IntegratorConfig::new(0.3, 1.0).n_steps(), 4);
    }

    #[test]
    fn exit_at_start_and_timeout() {
        let ou = ou_1d(1.0).unwrap();
        let set = DomainSpec::ball("unit", vec![0], vec![0.0], 1.0);
        let cfg = IntegratorConfig::new(1e-3, 0.05);
        let r = simulate_until(&ou, &[1.0], 0.5, &cfg, std::slice::from_ref(&set), &mut NoiseStream::new(0, 0)).unwrap();
        assert_eq!((r.tau, r.label), (0.0, ExitLabel::Set(0)));
        let r = simulate_until(&ou, &[0.0], 0.01, &cfg, &[set], &mut NoiseStream::new(0, 0)).unwrap();
        assert_eq!((r.tau, r.label), (0.05, ExitLabel::Timeout));
    }

    #[test]
    fn trajectory_sample_counts() {
        let ou = ou_1d(1.0).unwrap();
        let cfg = IntegratorConfig::new(0.01, 0.1);
        let tr = sample_trajectory(&ou, &[0.0], 1.0, &cfg, &mut NoiseStream::new(0, 0), 1).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        let cfg = IntegratorConfig::new(0.01, 1.05);
        let tr = sample_trajectory(&ou, &[0.0], 1.0, &cfg, &mut NoiseStream::new(0, 0), 10).unwrap();
        assert_eq!(tr.len(), 105 / 10 + 1);
    }

    #[test]
    fn csv_header_and_precision() {
        let tr = Trajectory { times: vec![0.0, 0.1], states: vec![vec![1.0, 2.0], vec![1.0 / 3.0, 2.0]], stride: 1 };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2");
        lines.next();
        let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[1], 1.0 / 3.0);
    }

    #[test]
    fn divergence_is_reported() {
        let blowup = crate::model::AdditiveSde::new(
            "blowup",
            std::sync::Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * 1e10),
            DMatrix::from_element(1, 1, 0.0),
        );
        let cfg = IntegratorConfig::new(1.0, 100.0);
        let r = sample_trajectory(&blowup, &[1.0], 0.0, &cfg, &mut NoiseStream::new(0, 0), 1);
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }
}
