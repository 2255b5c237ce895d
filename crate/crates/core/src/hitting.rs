//! Monte Carlo estimators built on [`simulate_until`]: mean first exit times,
//! finite-horizon hitting probabilities, committors, exponential fits of exit
//! times, the ε-sweep regression and empirical covariances.

use std::io::Write;

use nalgebra::DMatrix;

use crate::dynamics::{fmt_f64, run_trials, simulate_until, IntegratorConfig, NoiseStream, Sde, Trajectory};
use crate::error::{Error, Result};
use crate::model::DomainSpec;

pub use crate::dynamics::{ExitLabel, HittingResult};

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Argument(format!("noise level must be positive, got {eps}")));
    }
    Ok(())
}

fn check_trials(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("need at least one trial".into()));
    }
    Ok(())
}

/// `−ε log p`, with `+∞` for `p = 0`.
pub fn value_from_probability(eps: f64, p: f64) -> f64 {
    if p <= 0.0 {
        f64::INFINITY
    } else if p >= 1.0 {
        0.0
    } else {
        -eps * p.ln()
    }
}

/// Mean first exit time estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MfetEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    /// Trials censored at `t_max`. When nonzero, `mean` is only a lower bound.
    pub timeout_count: u64,
}

impl MfetEstimate {
    pub fn is_lower_bound(&self) -> bool {
        self.timeout_count > 0
    }

    pub fn from_samples(taus: &[f64], timeout_count: u64) -> Self {
        let n = taus.len();
        let mean = taus.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        MfetEstimate { mean, stderr, n: n as u64, timeout_count }
    }
}

/// Exit times of `n_trials` independent runs from `x0` out of `domain`.
/// Trial `i` uses `NoiseStream::new(master_seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn exit_times<S: Sde + ?Sized>(
    sde: &S,
    domain: &DomainSpec,
    eps: f64,
    x0: &[f64],
    n_trials: u64,
    cfg: &IntegratorConfig,
    master_seed: u64,
) -> Result<Vec<HittingResult>> {
    check_eps(eps)?;
    check_trials(n_trials)?;
    cfg.validate()?;
    let sets = std::slice::from_ref(domain);
    run_trials(n_trials, |i| simulate_until(sde, x0, eps, cfg, sets, &mut NoiseStream::new(master_seed, i)))
}

/// Mean first exit time from `domain` (exit when `c(x) ≥ 0`).
pub fn estimate_mfet<S: Sde + ?Sized>(
    sde: &S,
    domain: &DomainSpec,
    eps: f64,
    x0: &[f64],
    n_trials: u64,
    cfg: &IntegratorConfig,
    master_seed: u64,
) -> Result<MfetEstimate> {
    let results = exit_times(sde, domain, eps, x0, n_trials, cfg, master_seed)?;
    let timeouts = results.iter().filter(|r| r.timed_out()).count() as u64;
    let taus: Vec<f64> = results.iter().map(|r| r.tau).collect();
    if timeouts > 0 {
        log::warn!("{timeouts} of {n_trials} trials reached t_max = {}; MFET is a lower bound", cfg.t_max);
    }
    Ok(MfetEstimate::from_samples(&taus, timeouts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HittingProbability {
    pub p: f64,
    /// Binomial standard error `√(p(1−p)/n)`.
    pub stderr: f64,
    /// `−ε log p`; `+∞` when no trial hit.
    pub value: f64,
    pub n: u64,
    pub hits: u64,
}

/// Probability of reaching the closure of `target` before `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_hitting_prob<S: Sde + ?Sized>(
    sde: &S,
    target: &DomainSpec,
    horizon: f64,
    eps: f64,
    x0: &[f64],
    n_trials: u64,
    cfg: &IntegratorConfig,
    master_seed: u64,
) -> Result<HittingProbability> {
    check_eps(eps)?;
    check_trials(n_trials)?;
    let cfg = IntegratorConfig { t_max: horizon, ..*cfg };
    cfg.validate()?;
    let exit = [target.complement()];
    let results = run_trials(n_trials, |i| simulate_until(sde, x0, eps, &cfg, &exit, &mut NoiseStream::new(master_seed, i)))?;
    let hits = results.iter().filter(|r| r.label == ExitLabel::Set(0)).count() as u64;
    let p = hits as f64 / n_trials as f64;
    Ok(HittingProbability {
        p,
        stderr: (p * (1.0 - p) / n_trials as f64).sqrt(),
        value: value_from_probability(eps, p),
        n: n_trials,
        hits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommittorEstimate {
    /// `P(τ_B < τ_A)` over uncensored trials.
    pub q: f64,
    pub stderr: f64,
    /// `−ε log q`.
    pub value: f64,
    pub hit_a: u64,
    pub hit_b: u64,
    /// Trials that reached `t_max` first; excluded from `q`.
    pub censored: u64,
}

impl CommittorEstimate {
    /// `P(τ_A < τ_B)` from the same trials; `q + q_a = 1` exactly.
    pub fn q_a(&self) -> f64 {
        self.hit_a as f64 / (self.hit_a + self.hit_b) as f64
    }
}

/// Committor `P(τ_B < τ_A | X₀ = x0)`; `t_max` of `cfg` is the censoring
/// horizon.
#[allow(clippy::too_many_arguments)]
pub fn estimate_committor<S: Sde + ?Sized>(
    sde: &S,
    a: &DomainSpec,
    b: &DomainSpec,
    eps: f64,
    x0: &[f64],
    n_trials: u64,
    cfg: &IntegratorConfig,
    master_seed: u64,
) -> Result<CommittorEstimate> {
    check_eps(eps)?;
    check_trials(n_trials)?;
    cfg.validate()?;
    // A ∩ B = ∅ can only be checked pointwise
    let in_closure = |d: &DomainSpec, x: &[f64]| d.level(x) <= 0.0;
    if in_closure(a, x0) && in_closure(b, x0) {
        return Err(Error::Overlap(format!("initial state {x0:?} lies in both {} and {}", a.label(), b.label())));
    }
    let exit = [a.complement(), b.complement()];
    let results = run_trials(n_trials, |i| simulate_until(sde, x0, eps, cfg, &exit, &mut NoiseStream::new(master_seed, i)))?;
    let (mut hit_a, mut hit_b, mut censored) = (0u64, 0u64, 0u64);
    for r in &results {
        match r.label {
            ExitLabel::Set(_) if in_closure(a, &r.exit_state) && in_closure(b, &r.exit_state) => {
                return Err(Error::Overlap(format!("exit state {:?} lies in both sets", r.exit_state)));
            }
            ExitLabel::Set(0) => hit_a += 1,
            ExitLabel::Set(_) => hit_b += 1,
            ExitLabel::Timeout => censored += 1,
        }
    }
    let decided = hit_a + hit_b;
    if decided == 0 {
        return Err(Error::NoData(format!("all {n_trials} trials censored at t_max = {}", cfg.t_max)));
    }
    let q = hit_b as f64 / decided as f64;
    Ok(CommittorEstimate {
        q,
        stderr: (q * (1.0 - q) / decided as f64).sqrt(),
        value: value_from_probability(eps, q),
        hit_a,
        hit_b,
        censored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialFit {
    /// Maximum-likelihood rate `1/mean`.
    pub rate: f64,
    pub mean: f64,
    /// Coefficient of variation `std/mean`; 1 for an exponential law.
    pub cv: f64,
    /// Kolmogorov–Smirnov distance to `Exp(rate)`.
    pub ks: f64,
}

pub fn fit_exponential(taus: &[f64]) -> Result<ExponentialFit> {
    if taus.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 samples, got {}", taus.len())));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::Argument(format!("exit times must be positive, got {t}")));
    }
    let n = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / n;
    let var = taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    let rate = 1.0 / mean;
    let mut sorted = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ks = 0.0_f64;
    for (i, t) in sorted.iter().enumerate() {
        let cdf = 1.0 - (-rate * t).exp();
        ks = ks.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
    }
    Ok(ExponentialFit { rate, mean, cv: var.sqrt() / mean, ks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitWeighting {
    #[default]
    Ordinary,
    /// Weights `1/Var(log mean) ≈ (mean/stderr)²`.
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Weighted least squares `y ≈ intercept + slope·x`.
pub fn fit_line(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    let ones = vec![1.0; x.len()];
    let w = w.unwrap_or(&ones);
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(Error::Argument("need at least two distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LineFit { slope, intercept: my - slope * mx, r_squared })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub estimate: MfetEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Fit of `log mean` against `1/ε` over rows without timeouts.
    pub fit: LineFit,
    /// ε values excluded from the fit because some trials timed out.
    pub excluded: Vec<f64>,
}

impl SweepResult {
    pub fn slope(&self) -> f64 {
        self.fit.slope
    }

    pub fn intercept(&self) -> f64 {
        self.fit.intercept
    }

    /// `eps,inv_eps,mean_tau,stderr,n,timeouts`
    pub fn write_table_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "eps,inv_eps,mean_tau,stderr,n,timeouts")?;
        for r in &self.rows {
            let e = &r.estimate;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(r.eps),
                fmt_f64(1.0 / r.eps),
                fmt_f64(e.mean),
                fmt_f64(e.stderr),
                e.n,
                e.timeout_count
            )?;
        }
        Ok(())
    }

    /// `slope,intercept,r_squared`
    pub fn write_fit_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "slope,intercept,r_squared")?;
        writeln!(w, "{},{},{}", fmt_f64(self.fit.slope), fmt_f64(self.fit.intercept), fmt_f64(self.fit.r_squared))?;
        Ok(())
    }
}

/// Fits `log mean(ε) = intercept + slope/ε` over rows; timed-out rows are
/// skipped and listed.
pub fn fit_sweep(rows: Vec<SweepRow>, weighting: FitWeighting) -> Result<SweepResult> {
    let (kept, dropped): (Vec<&SweepRow>, Vec<&SweepRow>) = rows.iter().partition(|r| !r.estimate.is_lower_bound());
    let excluded: Vec<f64> = dropped.iter().map(|r| r.eps).collect();
    let logs: Vec<f64> = kept.iter().map(|r| r.estimate.mean.ln()).collect();
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoData("a mean exit time is zero; log-fit undefined".into()));
    }
    let weights: Option<Vec<f64>> = match weighting {
        FitWeighting::Ordinary => None,
        FitWeighting::InverseVariance => Some(
            kept.iter()
                .map(|r| {
                    let rel = r.estimate.stderr / r.estimate.mean;
                    if rel > 0.0 { 1.0 / (rel * rel) } else { 1.0 }
                })
                .collect(),
        ),
    };
    let distinct = {
        let mut v: Vec<f64> = kept.iter().map(|r| r.eps).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct < 2 {
        return Err(Error::NoData(format!(
            "fewer than two usable noise levels (excluded for timeouts: {excluded:?})"
        )));
    }
    let x: Vec<f64> = kept.iter().map(|r| 1.0 / r.eps).collect();
    let fit = fit_line(&x, &logs, weights.as_deref())?;
    Ok(SweepResult { rows, fit, excluded })
}

/// Runs [`estimate_mfet`] at each ε and regresses `log mean` on `1/ε`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_mfet<S: Sde + ?Sized>(
    sde: &S,
    domain: &DomainSpec,
    eps_list: &[f64],
    x0: &[f64],
    n_trials: u64,
    cfg: &IntegratorConfig,
    master_seed: u64,
    weighting: FitWeighting,
) -> Result<SweepResult> {
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Argument("noise levels must be positive".into()));
    }
    let mut distinct = eps_list.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Argument("need at least two distinct noise levels".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let estimate = estimate_mfet(sde, domain, eps, x0, n_trials, cfg, master_seed)?;
        rows.push(SweepRow { eps, estimate });
    }
    fit_sweep(rows, weighting)
}

/// Sample covariance (divisor `N − 1`) of the states after discarding the
/// leading `burn_in` fraction.
pub fn empirical_covariance(traj: &Trajectory, burn_in: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::Argument(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    let n = traj.states.first().map_or(0, Vec::len);
    let skip = (traj.len() as f64 * burn_in).floor() as usize;
    let kept = &traj.states[skip.min(traj.len())..];
    if n == 0 || kept.len() < n + 1 {
        return Err(Error::NoData(format!("{} samples after burn-in for dimension {n}", kept.len())));
    }
    let m = kept.len() as f64;
    let mut mean = vec![0.0; n];
    for x in kept {
        for i in 0..n {
            mean[i] += x[i];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut cov = DMatrix::zeros(n, n);
    for x in kept {
        for i in 0..n {
            let di = x[i] - mean[i];
            for j in i..n {
                cov[(i, j)] += di * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            cov[(i, j)] /= m - 1.0;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok(cov)
}
