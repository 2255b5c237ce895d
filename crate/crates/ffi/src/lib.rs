//! C interface. Models and domains are opaque handles; every fallible call
//! returns an [`HrStatus`] and leaves a message for [`hr_last_error`].
//!
//! Arrays are passed as pointer plus length; matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hamreach::boundary::{boundary_infimum, OptimizerConfig, SamplingBox};
use hamreach::cli::resolve_domain;
use hamreach::coarse::{free_energy, Quadrature, ResolvedSplit};
use hamreach::dynamics::IntegratorConfig;
use hamreach::hitting::estimate_mfet;
use hamreach::models::{lookup, Model, ModelCatalogEntry};
use hamreach::{DomainSpec, Error};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Diverged = 4,
    Budget = 5,
    NotHurwitz = 6,
    IllPosed = 7,
    NotPositive = 8,
    NoConvergence = 9,
    NotConfining = 10,
    DegenerateProjection = 11,
    Unsupported = 12,
    Numerical = 13,
    Panic = 14,
}

/// Opaque model handle.
pub struct HrModel {
    entry: ModelCatalogEntry,
}

/// Opaque domain handle.
pub struct HrDomain {
    domain: DomainSpec,
}

/// Mean first exit time estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HrMfet {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub timeout_count: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HrStatus {
    match e {
        Error::Dimension { .. } => HrStatus::Dimension,
        Error::Argument(_) | Error::Parse(_) | Error::InvalidModel(_) | Error::Overlap(_) | Error::Io(_) => HrStatus::InvalidArgument,
        Error::Diverged { .. } => HrStatus::Diverged,
        Error::Trial { source, .. } => status_of(source),
        Error::Budget { .. } => HrStatus::Budget,
        Error::NotHurwitz => HrStatus::NotHurwitz,
        Error::IllPosed => HrStatus::IllPosed,
        Error::NotPsd(_) | Error::NotPd(_) => HrStatus::NotPositive,
        Error::NoConvergence { .. } => HrStatus::NoConvergence,
        Error::NotConfining(_) => HrStatus::NotConfining,
        Error::DegenerateProjection(_) => HrStatus::DegenerateProjection,
        Error::NoData(_) | Error::Underflow => HrStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HrStatus, String)>) -> HrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HrStatus::Panic
        }
    }
}

fn lib<T>(r: hamreach::Result<T>) -> Result<T, (HrStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (HrStatus, String) {
    (HrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (HrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (HrStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], (HrStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const HrModel) -> Result<&'a HrModel, (HrStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn check_len(expected: usize, got: usize) -> Result<(), (HrStatus, String)> {
    if expected != got {
        return Err((HrStatus::Dimension, format!("expected length {expected}, got {got}")));
    }
    Ok(())
}

fn hamiltonian(m: &HrModel) -> Result<&hamreach::SystemSpec, (HrStatus, String)> {
    m.entry.model.as_system().ok_or_else(|| (HrStatus::Unsupported, format!("model `{}` is not Hamiltonian", m.entry.name)))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a model by catalog name (`double-pendulum`, `ou:a=1`, ...).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hr_model_new(name: *const c_char, out: *mut *mut HrModel) -> HrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let entry = lib(lookup(name))?;
        *out = Box::into_raw(Box::new(HrModel { entry }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hr_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_model_free(model: *mut HrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_model_dim(model: *const HrModel) -> usize {
    model.as_ref().map_or(0, |m| m.entry.model.dim())
}

/// Resolves a domain: a named domain of the model, `ball:r=<v>[:i,j]`,
/// `above:[x<i>=]<v>`, `below:[x<i>=]<v>`, optionally prefixed by `not:`.
///
/// # Safety
/// `model` must be a live handle, `spec` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hr_domain_new(model: *const HrModel, spec: *const c_char, out: *mut *mut HrDomain) -> HrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = model_ref(model)?;
        let domain = lib(resolve_domain(&m.entry, str_arg(spec, "spec")?))?;
        *out = Box::into_raw(Box::new(HrDomain { domain }));
        Ok(())
    })
}

/// # Safety
/// `domain` must come from [`hr_domain_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hr_domain_free(domain: *mut HrDomain) {
    if !domain.is_null() {
        drop(Box::from_raw(domain));
    }
}

/// Level `c(x)`; the domain is `{c < 0}`.
///
/// # Safety
/// `x` must point to `n` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn hr_domain_level(domain: *const HrDomain, x: *const f64, n: usize, out: *mut f64) -> HrStatus {
    guard(|| {
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        let x = slice_arg(x, n, "x")?;
        *out.as_mut().ok_or_else(|| null("out"))? = d.domain.level(x);
        Ok(())
    })
}

/// Drift `(J − D)∇H(x)` of a Hamiltonian model.
///
/// # Safety
/// `x` and `out` must point to `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn hr_drift(model: *const HrModel, x: *const f64, n: usize, out: *mut f64) -> HrStatus {
    guard(|| {
        let sys = hamiltonian(model_ref(model)?)?;
        check_len(sys.dim(), n)?;
        let f = lib(sys.drift(slice_arg(x, n, "x")?))?;
        slice_out(out, n, "out")?.copy_from_slice(&f);
        Ok(())
    })
}

/// Controllability function `L(x) = H(x) − H(x₀)`.
///
/// # Safety
/// `x` must point to `n` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn hr_controllability(model: *const HrModel, x: *const f64, n: usize, out: *mut f64) -> HrStatus {
    guard(|| {
        let sys = hamiltonian(model_ref(model)?)?;
        check_len(sys.dim(), n)?;
        let v = lib(sys.controllability_value(slice_arg(x, n, "x")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// HJB residual `f·∇L + |∇L|²_D` at `x`.
///
/// # Safety
/// `x` must point to `n` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn hr_hjb_residual(model: *const HrModel, x: *const f64, n: usize, out: *mut f64) -> HrStatus {
    guard(|| {
        let sys = hamiltonian(model_ref(model)?)?;
        check_len(sys.dim(), n)?;
        let v = lib(sys.hjb_residual(slice_arg(x, n, "x")?))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Mean first exit time from `domain` over `trials` Euler–Maruyama runs.
///
/// # Safety
/// `x0` must point to `n` doubles; handles must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hr_mfet(
    model: *const HrModel,
    domain: *const HrDomain,
    eps: f64,
    x0: *const f64,
    n: usize,
    trials: u64,
    dt: f64,
    t_max: f64,
    seed: u64,
    out: *mut HrMfet,
) -> HrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        check_len(m.entry.model.dim(), n)?;
        let x0 = slice_arg(x0, n, "x0")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let est = lib(estimate_mfet(&m.entry.model, &d.domain, eps, x0, trials, &IntegratorConfig::new(dt, t_max), seed))?;
        *out = HrMfet { mean: est.mean, stderr: est.stderr, n: est.n, timeout_count: est.timeout_count };
        Ok(())
    })
}

/// Gramian `Σ` of the model's linear companion, written row-major into
/// `sigma` (`len` must equal `n²`).
///
/// # Safety
/// `sigma` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_lyapunov(model: *const HrModel, sigma: *mut f64, len: usize) -> HrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let lin = m.entry.linear.clone().ok_or_else(|| (HrStatus::Unsupported, format!("model `{}` has no linear companion", m.entry.name)))?;
        let n = lin.dim();
        check_len(n * n, len)?;
        let lin = lib(lin.with_gramian())?;
        let s = lin.gramian().expect("gramian was just solved");
        let out = slice_out(sigma, len, "sigma")?;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = s[(i, j)];
            }
        }
        Ok(())
    })
}

/// Infimum of `L` over the boundary of `domain` (64 starts). `argmin` must
/// hold `n` doubles. Returns `NoConvergence` when no start converged.
///
/// # Safety
/// Handles must be live; `value` valid; `argmin` points to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_boundary_infimum(
    model: *const HrModel,
    domain: *const HrDomain,
    seed: u64,
    value: *mut f64,
    argmin: *mut f64,
    n: usize,
) -> HrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = domain.as_ref().ok_or_else(|| null("domain"))?;
        let sys = hamiltonian(m)?;
        check_len(sys.dim(), n)?;
        let objective = |x: &[f64]| sys.controllability_value(x).unwrap_or(f64::NAN);
        let cfg = OptimizerConfig { seed, ..Default::default() };
        let r = lib(boundary_infimum(&objective, &d.domain, &SamplingBox::for_system(sys), &cfg))?;
        *value.as_mut().ok_or_else(|| null("value"))? = r.value;
        slice_out(argmin, n, "argmin")?.copy_from_slice(&r.argmin);
        Ok(())
    })
}

/// Free energy of the positions `z` (length `dim/2`) at noise level `eps`,
/// normalized to 0 at the equilibrium. `closed_form` selects the Gaussian
/// formula instead of the tensor grid.
///
/// # Safety
/// `z` must point to `k` doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn hr_free_energy(model: *const HrModel, z: *const f64, k: usize, eps: f64, closed_form: bool, out: *mut f64) -> HrStatus {
    guard(|| {
        let sys = hamiltonian(model_ref(model)?)?;
        let quad = if closed_form { Quadrature::ClosedFormGaussian } else { Quadrature::default_grid() };
        let split = lib(ResolvedSplit::positions(sys.dim(), quad))?;
        check_len(split.resolved.len(), k)?;
        let v = lib(free_energy(sys, &split, slice_arg(z, k, "z")?, eps))?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// True when the model is one of the Hamiltonian (port-Hamiltonian) models.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hr_model_is_hamiltonian(model: *const HrModel) -> bool {
    model.as_ref().is_some_and(|m| matches!(m.entry.model, Model::Hamiltonian(_)))
}
