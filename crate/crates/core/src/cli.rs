//! Command-line front end. Every command writes its CSV results and a JSON
//! manifest into the output directory; `replay` re-executes a manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::boundary::{boundary_infimum, closed_form_sphere_quadratic, OptimizerConfig, SamplingBox};
use crate::coarse::{free_energy_limit, write_surface_csv, FreeEnergy, Quadrature, ResolvedSplit};
use crate::dynamics::{fmt_f64, sample_trajectory, IntegratorConfig, NoiseStream, DEFAULT_DT, DEFAULT_T_MAX};
use crate::error::{Error, Result};
use crate::hitting::{estimate_committor, estimate_hitting_prob, sweep_mfet, FitWeighting};
use crate::linear::{linearize, sphere_infimum, LinearModel, DEFAULT_FD_STEP};
use crate::model::DomainSpec;
use crate::models::{lookup, Model, ModelCatalogEntry};

pub const THREADS_ENV: &str = "HAMREACH_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hamreach", version, about = "Reachability analysis of randomly perturbed Hamiltonian systems")]
pub struct Cli {
    /// Worker threads; defaults to $HAMREACH_THREADS, then to the core count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Sample one trajectory.
    Simulate(SimulateArgs),
    /// Mean first exit time sweep over ε and the slope of log E(τ) in 1/ε.
    Mfet(MfetArgs),
    /// Probability of reaching a target set before a horizon.
    Hitprob(HitprobArgs),
    /// Probability of reaching B before A.
    Committor(CommittorArgs),
    /// Infimum of the controllability function over a domain boundary.
    InfL(InfArgs),
    /// Quadratic approximation about the equilibrium.
    Linearize(LinearizeArgs),
    /// Controllability Gramian of the linear model.
    Lyapunov(LyapunovArgs),
    /// Free energy of the resolved variables on a grid.
    FreeEnergy(FreeEnergyArgs),
    /// Run the invariant and oracle checks.
    Verify(VerifyArgs),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ModelArg {
    /// double-pendulum | double-pendulum-linear | ou:a=<v> | double-well | file:<path>
    #[arg(long)]
    pub model: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct NoiseArgs {
    /// Noise levels, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "inv_eps", required_unless_present = "inv_eps")]
    pub eps: Option<Vec<f64>>,
    /// Inverse noise levels 1/ε, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub inv_eps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct IntegratorArgs {
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    pub t_max: f64,
    /// Refine exit times by linear interpolation of the level function.
    #[arg(long)]
    pub interpolate_crossing: bool,
    /// Detect crossings between grid points with the Brownian-bridge probability.
    #[arg(long)]
    pub bridge_crossing: bool,
}

impl IntegratorArgs {
    fn config(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            t_max: self.t_max,
            interpolate_crossing: self.interpolate_crossing,
            bridge_crossing: self.bridge_crossing,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub eps: f64,
    /// Initial state, comma separated; defaults to the model's reference state.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    #[arg(long, default_value_t = 10.0)]
    pub t_max: f64,
    /// Record every `stride`-th state.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
pub enum Weighting {
    Ols,
    InverseVariance,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct MfetArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Domain to exit: a named domain of the model, ball:r=<v>[:<i>,<j>...],
    /// above:[x<i>=]<v> or below:[x<i>=]<v>.
    #[arg(long)]
    pub domain: String,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 120)]
    pub trials: u64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Weighting::Ols)]
    pub weighting: Weighting,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct HitprobArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Target set; prefix with `not:` for the complement of a domain.
    #[arg(long)]
    pub target: String,
    /// Horizon T.
    #[arg(long)]
    pub horizon: f64,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    #[arg(long)]
    pub bridge_crossing: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct CommittorArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long = "set-a")]
    pub set_a: String,
    #[arg(long = "set-b")]
    pub set_b: String,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub x0: Option<Vec<f64>>,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct InfArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub domain: String,
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct LinearizeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    pub fd_step: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub model: ModelArg,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
pub enum QuadratureArg {
    Closed,
    Grid,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct FreeEnergyArgs {
    #[command(flatten)]
    pub model: ModelArg,
    /// Resolved coordinate indices (0-based); defaults to the positions.
    #[arg(long, value_delimiter = ',')]
    pub resolved: Option<Vec<usize>>,
    #[arg(long, conflicts_with = "limit", required_unless_present = "limit")]
    pub eps: Option<f64>,
    /// Report the ε → 0 limit instead of a fixed ε.
    #[arg(long)]
    pub limit: bool,
    /// Grid `lo:hi:n` along every resolved coordinate.
    #[arg(long, default_value = "-1:1:5", allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long, value_enum, default_value_t = QuadratureArg::Grid)]
    pub quadrature: QuadratureArg,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct VerifyArgs {
    /// Monte Carlo budget of each oracle comparison.
    #[arg(long, default_value_t = 2000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, PartialEq)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Run record written next to every result.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    pub version: String,
    pub threads: usize,
    pub outputs: Vec<String>,
    /// Diagnostics that are not part of the result files.
    pub summary: BTreeMap<String, serde_json::Value>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("manifest {}: {e}", path.display())))
    }
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, serde_json::Value>,
    /// Command completed but a check failed.
    pub failed: bool,
}

impl Outcome {
    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }
}

fn create(out: &Path, name: &str, outcome: &mut Outcome) -> Result<BufWriter<File>> {
    outcome.outputs.push(name.to_string());
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn noise_levels(noise: &NoiseArgs) -> Result<Vec<f64>> {
    let levels = match (&noise.eps, &noise.inv_eps) {
        (Some(e), None) => e.clone(),
        (None, Some(inv)) => inv.iter().map(|v| 1.0 / v).collect(),
        _ => return Err(Error::Argument("give exactly one of --eps and --inv-eps".into())),
    };
    if levels.is_empty() || levels.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Argument(format!("noise levels must be positive and finite, got {levels:?}")));
    }
    Ok(levels)
}

fn initial_state(entry: &ModelCatalogEntry, x0: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    let x = x0.clone().unwrap_or_else(|| entry.model.reference_state());
    if x.len() != entry.model.dim() {
        return Err(Error::Argument(format!("x0 has {} entries, model `{}` has dimension {}", x.len(), entry.name, entry.model.dim())));
    }
    Ok(x)
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Argument(format!("cannot parse {what} from `{s}`")))
}

/// `[x<i>=]<v>` with 1-based `i`, defaulting to the first coordinate.
fn parse_threshold(s: &str, dim: usize) -> Result<(usize, f64)> {
    match s.split_once('=') {
        Some((coord, v)) => {
            let i: usize = coord
                .strip_prefix('x')
                .and_then(|k| k.parse().ok())
                .filter(|k| (1..=dim).contains(k))
                .ok_or_else(|| Error::Argument(format!("bad coordinate `{coord}` for dimension {dim}")))?;
            Ok((i - 1, parse_num(v, "threshold")?))
        }
        None => Ok((0, parse_num(s, "threshold")?)),
    }
}

/// Resolves a domain argument against the model's named domains.
pub fn resolve_domain(entry: &ModelCatalogEntry, spec: &str) -> Result<DomainSpec> {
    if let Some(rest) = spec.strip_prefix("not:") {
        return Ok(resolve_domain(entry, rest)?.complement());
    }
    if let Some(d) = entry.domain(spec) {
        return Ok(d.clone());
    }
    let dim = entry.model.dim();
    let center = entry.model.reference_state();
    if let Some(rest) = spec.strip_prefix("ball:") {
        let (radius, idx) = match rest.split_once(':') {
            Some((r, idx)) => (r, Some(idx)),
            None => (rest, None),
        };
        let r = parse_num(radius.strip_prefix("r=").unwrap_or(radius), "radius")?;
        if !(r > 0.0) {
            return Err(Error::Argument(format!("ball radius must be positive, got {r}")));
        }
        let indices: Vec<usize> = match idx {
            Some(list) => list
                .split(',')
                .map(|k| k.trim().parse::<usize>().ok().filter(|k| *k < dim))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::Argument(format!("bad ball indices `{list}`")))?,
            None => (0..dim).collect(),
        };
        let c = indices.iter().map(|&i| center[i]).collect();
        return Ok(DomainSpec::ball(spec, indices, c, r));
    }
    if let Some(rest) = spec.strip_prefix("above:") {
        let (i, v) = parse_threshold(rest, dim)?;
        return Ok(DomainSpec::above(spec, i, v));
    }
    if let Some(rest) = spec.strip_prefix("below:") {
        let (i, v) = parse_threshold(rest, dim)?;
        return Ok(DomainSpec::below(spec, i, v));
    }
    let known: Vec<&str> = entry.domains.iter().map(|d| d.label()).collect();
    Err(Error::Argument(format!("unknown domain `{spec}` for model `{}` (named domains: {known:?})", entry.name)))
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

/// Row-major CSV with header `n,m`.
pub fn write_matrix_to<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(w, "{},{}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().copied().map(fmt_f64).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let dims: Vec<usize> = header.split(',').map(|v| v.trim().parse().map_err(|_| Error::Parse(format!("bad header `{header}`")))).collect::<Result<_>>()?;
    let [n, m] = dims[..] else {
        return Err(Error::Parse(format!("header must be `n,m`, got `{header}`")));
    };
    let mut data = Vec::with_capacity(n * m);
    for line in lines {
        for v in line.split(',') {
            data.push(v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad entry `{v}`")))?);
        }
    }
    if data.len() != n * m {
        return Err(Error::Parse(format!("expected {} entries, found {}", n * m, data.len())));
    }
    Ok(DMatrix::from_row_slice(n, m, &data))
}

fn linear_companion(entry: &ModelCatalogEntry) -> Result<LinearModel> {
    entry.linear.clone().ok_or_else(|| Error::Argument(format!("model `{}` has no linear companion", entry.name)))
}

fn cmd_simulate(a: &SimulateArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let x0 = initial_state(&entry, &a.x0)?;
    let cfg = IntegratorConfig::new(a.dt, a.t_max);
    let mut noise = NoiseStream::new(a.seed, a.stream);
    let traj = sample_trajectory(&entry.model, &x0, a.eps, &cfg, &mut noise, a.stride)?;
    let mut w = create(out, "trajectory.csv", o)?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    o.note("samples", traj.len());
    Ok(())
}

fn cmd_mfet(a: &MfetArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let domain = resolve_domain(&entry, &a.domain)?;
    let x0 = initial_state(&entry, &a.x0)?;
    let eps = noise_levels(&a.noise)?;
    let weighting = match a.weighting {
        Weighting::Ols => FitWeighting::Ordinary,
        Weighting::InverseVariance => FitWeighting::InverseVariance,
    };
    let sweep = sweep_mfet(&entry.model, &domain, &eps, &x0, a.trials, &a.integrator.config(), a.seed, weighting)?;
    let mut w = create(out, "mfet_sweep.csv", o)?;
    sweep.write_table_csv(&mut w)?;
    w.flush()?;
    let mut w = create(out, "mfet_fit.csv", o)?;
    sweep.write_fit_csv(&mut w)?;
    w.flush()?;
    o.note("slope", sweep.slope());
    o.note("excluded_eps", &sweep.excluded);
    Ok(())
}

fn cmd_hitprob(a: &HitprobArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let target = resolve_domain(&entry, &a.target)?;
    let x0 = initial_state(&entry, &a.x0)?;
    let cfg = IntegratorConfig { bridge_crossing: a.bridge_crossing, ..IntegratorConfig::new(a.dt, a.horizon) };
    let mut w = create(out, "hitprob.csv", o)?;
    writeln!(w, "eps,inv_eps,horizon,p,stderr,value,n,hits")?;
    for eps in noise_levels(&a.noise)? {
        let h = estimate_hitting_prob(&entry.model, &target, a.horizon, eps, &x0, a.trials, &cfg, a.seed)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(eps),
            fmt_f64(1.0 / eps),
            fmt_f64(a.horizon),
            fmt_f64(h.p),
            fmt_f64(h.stderr),
            fmt_f64(h.value),
            h.n,
            h.hits
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_committor(a: &CommittorArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let set_a = resolve_domain(&entry, &a.set_a)?;
    let set_b = resolve_domain(&entry, &a.set_b)?;
    let x0 = initial_state(&entry, &a.x0)?;
    let mut w = create(out, "committor.csv", o)?;
    writeln!(w, "eps,inv_eps,q,stderr,value,hit_a,hit_b,censored")?;
    for eps in noise_levels(&a.noise)? {
        let c = estimate_committor(&entry.model, &set_a, &set_b, eps, &x0, a.trials, &a.integrator.config(), a.seed)?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(eps),
            fmt_f64(1.0 / eps),
            fmt_f64(c.q),
            fmt_f64(c.stderr),
            fmt_f64(c.value),
            c.hit_a,
            c.hit_b,
            c.censored
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_inf_l(a: &InfArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let domain = resolve_domain(&entry, &a.domain)?;
    let cfg = OptimizerConfig { n_starts: a.starts, seed: a.seed, ..Default::default() };
    let result = match &entry.model {
        Model::Hamiltonian(sys) => {
            let objective = |x: &[f64]| sys.controllability_value(x).unwrap_or(f64::NAN);
            let r = boundary_infimum(&objective, &domain, &SamplingBox::for_system(sys), &cfg)?;
            if let Some(lin) = &entry.linear {
                if entry.name == "double-pendulum-linear" && a.domain == "D2" {
                    // ½ λ_min(N) r² with N the position block of the Hessian
                    let n = lin.a.view((2, 0), (2, 2)).clone_owned() * -1.0;
                    o.note("closed_form", closed_form_sphere_quadratic(&n, 0.5)?);
                }
            }
            r
        }
        Model::Linear(lin) => {
            let sigma = lin.clone().with_gramian()?.gramian().cloned().expect("gramian was just solved");
            let inv = sigma.clone().try_inverse().ok_or(Error::NotPd(0.0))?;
            let objective = move |x: &[f64]| {
                let v = nalgebra::DVector::from_column_slice(x);
                0.5 * v.dot(&(&inv * &v))
            };
            let n = lin.dim();
            let sampling = SamplingBox::new(vec![-3.0; n], vec![3.0; n])?;
            let r = boundary_infimum(&objective, &domain, &sampling, &cfg)?;
            if let Some(rest) = a.domain.strip_prefix("ball:") {
                if !rest.contains(':') {
                    let radius = parse_num(rest.strip_prefix("r=").unwrap_or(rest), "radius")?;
                    o.note("closed_form", sphere_infimum(&sigma, radius)?);
                }
            } else if entry.domain(&a.domain).is_some() && a.domain == "unit" {
                o.note("closed_form", sphere_infimum(&sigma, 1.0)?);
            }
            r
        }
        Model::Additive(_) => {
            return Err(Error::Argument(format!("model `{}` has no controllability function", entry.name)));
        }
    };
    let mut w = create(out, "inf_l.csv", o)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    o.note("value", result.value);
    o.note("n_agreeing", result.n_agreeing);
    o.note("certified", result.is_certified());
    if !result.is_certified() {
        log::warn!("only {} starts agree on the best value; reporting an upper bound", result.n_agreeing);
    }
    Ok(())
}

fn cmd_linearize(a: &LinearizeArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let sys = entry
        .model
        .as_system()
        .ok_or_else(|| Error::Argument(format!("model `{}` is not Hamiltonian", entry.name)))?;
    let lin = linearize(sys, sys.equilibrium(), a.fd_step)?;
    for (name, m) in [("linearize_a.csv", &lin.model.a), ("linearize_c.csv", &lin.model.c), ("linearize_hessian.csv", &lin.hessian)] {
        write_matrix(&out.join(name), m)?;
        o.outputs.push(name.into());
    }
    o.note("hessian_asymmetry", lin.asymmetry);
    if let Some(w) = &lin.warning {
        log::warn!("{w}");
        o.note("warning", w);
    }
    Ok(())
}

fn cmd_lyapunov(a: &LyapunovArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let lin = linear_companion(&entry)?.with_gramian()?;
    let sigma = lin.gramian().expect("gramian was just solved");
    write_matrix(&out.join("lyapunov_sigma.csv"), sigma)?;
    o.outputs.push("lyapunov_sigma.csv".into());
    o.note("residual", lin.lyapunov_residual(sigma));
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(Error::Argument(format!("grid must be lo:hi:n, got `{spec}`")));
    };
    let (lo, hi) = (parse_num(lo, "grid bound")?, parse_num(hi, "grid bound")?);
    let n: usize = n.trim().parse().map_err(|_| Error::Argument(format!("bad grid size `{n}`")))?;
    if n == 0 || !(lo <= hi) || (n == 1 && lo != hi) {
        return Err(Error::Argument(format!("invalid grid `{spec}`")));
    }
    Ok(if n == 1 { vec![lo] } else { (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect() })
}

fn cmd_free_energy(a: &FreeEnergyArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let entry = lookup(&a.model.model)?;
    let sys = entry
        .model
        .as_system()
        .ok_or_else(|| Error::Argument(format!("model `{}` is not Hamiltonian", entry.name)))?;
    let quadrature = match a.quadrature {
        QuadratureArg::Closed => Quadrature::ClosedFormGaussian,
        QuadratureArg::Grid => Quadrature::default_grid(),
    };
    let split = match &a.resolved {
        Some(r) => ResolvedSplit::new(sys.dim(), r.clone(), quadrature)?,
        None => ResolvedSplit::positions(sys.dim(), quadrature)?,
    };
    let axis = parse_grid(&a.grid)?;
    let k = split.resolved.len();
    let total = axis.len().checked_pow(k as u32).filter(|t| *t <= 1_000_000).ok_or_else(|| Error::Argument("grid too large".into()))?;
    let mut points = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut z = vec![0.0; k];
        for slot in z.iter_mut().rev() {
            *slot = axis[rem % axis.len()];
            rem /= axis.len();
        }
        points.push(z);
    }
    let values: Vec<f64> = if a.limit {
        let mut v = Vec::with_capacity(total);
        for z in &points {
            let lim = free_energy_limit(sys, &split, z)?;
            if let Some(w) = lim.warning {
                log::warn!("{w}");
            }
            v.push(lim.value);
        }
        v
    } else {
        let eps = a.eps.ok_or_else(|| Error::Argument("--eps or --limit is required".into()))?;
        let fe = FreeEnergy::new(sys, &split, eps)?;
        points.iter().map(|z| fe.eval(z)).collect::<Result<_>>()?
    };
    let mut w = create(out, "free_energy.csv", o)?;
    write_surface_csv(&mut w, &points, &values)?;
    w.flush()?;
    Ok(())
}

fn cmd_verify(a: &VerifyArgs, out: &Path, o: &mut Outcome) -> Result<()> {
    let report = crate::verify::run(a.trials, a.seed)?;
    for c in &report.checks {
        eprintln!("{} {:<40} {:>12.4e} (tol {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
    }
    let mut w = create(out, "verify.csv", o)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    o.failed = !report.passed();
    o.note("passed", report.passed());
    Ok(())
}

/// Executes one command, writing results into `out`.
pub fn execute(command: &Command, out: &Path) -> Result<Outcome> {
    let mut o = Outcome::default();
    match command {
        Command::Simulate(a) => cmd_simulate(a, out, &mut o)?,
        Command::Mfet(a) => cmd_mfet(a, out, &mut o)?,
        Command::Hitprob(a) => cmd_hitprob(a, out, &mut o)?,
        Command::Committor(a) => cmd_committor(a, out, &mut o)?,
        Command::InfL(a) => cmd_inf_l(a, out, &mut o)?,
        Command::Linearize(a) => cmd_linearize(a, out, &mut o)?,
        Command::Lyapunov(a) => cmd_lyapunov(a, out, &mut o)?,
        Command::FreeEnergy(a) => cmd_free_energy(a, out, &mut o)?,
        Command::Verify(a) => cmd_verify(a, out, &mut o)?,
        Command::Replay(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            return execute(&manifest.command, out);
        }
    }
    Ok(o)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Mfet(_) => "mfet",
        Command::Hitprob(_) => "hitprob",
        Command::Committor(_) => "committor",
        Command::InfL(_) => "inf-l",
        Command::Linearize(_) => "linearize",
        Command::Lyapunov(_) => "lyapunov",
        Command::FreeEnergy(_) => "free-energy",
        Command::Verify(_) => "verify",
        Command::Replay(_) => "replay",
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return if n == 0 { Err(Error::Argument("--threads must be at least 1".into())) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| Error::Argument(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Argument(_) | Error::Parse(_) | Error::Dimension { .. })
}

fn run_parsed(cli: Cli) -> Result<Outcome> {
    let threads = thread_count(cli.threads)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Argument(format!("thread pool: {e}")))?
    };
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::Argument(format!("output directory {}: {e}", cli.out.display())))?;
    let command = match &cli.command {
        Command::Replay(a) => RunManifest::load(&a.manifest)?.command,
        c => c.clone(),
    };
    let start = Instant::now();
    let outcome = pool.install(|| execute(&command, &cli.out))?;
    let manifest = RunManifest {
        command: command.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: pool.current_num_threads(),
        outputs: outcome.outputs.clone(),
        summary: outcome.summary.clone(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let name = format!("{}.manifest.json", command_name(&command));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(cli.out.join(name), text + "\n")?;
    Ok(outcome)
}

/// Parses `args` and runs; returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run_parsed(cli) {
        Ok(o) if o.failed => EXIT_NUMERICAL,
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage(&e) {
                EXIT_USAGE
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}
