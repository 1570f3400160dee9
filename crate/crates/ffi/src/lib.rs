//! C interface to the core engines.
//!
//! Specs live behind an opaque [`RslSpec`] handle. Every fallible call returns
//! an [`RslStatus`]; on failure a message is kept per thread and can be read
//! with [`rsl_last_error`]. Strings returned through `char **` outputs are
//! owned by the caller and must be released with [`rsl_string_free`].
//!
//! Panics never cross the boundary: they are reported as
//! [`RslStatus::Panic`].
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the documented length, and
//! C strings must be NUL-terminated. Handles must come from this library and
//! must not be used after [`rsl_spec_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rsl_core::cli::{execute, ExperimentConfig};
use rsl_core::conditions::{certify_all, CertifyOptions};
use rsl_core::model::{ModelConfig, UncertaintySpec};
use rsl_core::path::PathView;
use rsl_core::report::to_json_string;
use rsl_core::value::{dual_value, primal_value, superhedge, LatticeConfig, Payoff, UtilitySpec};
use rsl_core::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RslStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad configuration, expression or family parameters.
    Config = 3,
    /// Argument outside the domain of the operation, or mismatched sizes.
    Domain = 4,
    ParamOutOfBox = 5,
    /// No duality theorem covers the request.
    NotApplicable = 6,
    PreconditionNotCertified = 7,
    MprInfeasible = 8,
    NumericOverflow = 9,
    /// Lattice or density grid cannot represent the problem.
    GridTooCoarse = 10,
    SuperhedgeViolation = 11,
    Unsupported = 12,
    Io = 13,
    Panic = 99,
}

fn status_of(e: &Error) -> RslStatus {
    match e {
        Error::ParamOutOfBox { .. } => RslStatus::ParamOutOfBox,
        Error::NonPsdDiffusion { .. } | Error::Domain(_) | Error::DomainMismatch(_) => RslStatus::Domain,
        Error::BadFamilyParams { .. } | Error::Config { .. } | Error::Expr(_) => RslStatus::Config,
        Error::MprInfeasible { .. } => RslStatus::MprInfeasible,
        Error::NumericOverflow { .. } => RslStatus::NumericOverflow,
        Error::PreconditionNotCertified(_) => RslStatus::PreconditionNotCertified,
        Error::GridTooCoarse { .. } | Error::LogDensityGridExceeded { .. } => RslStatus::GridTooCoarse,
        Error::NotApplicable(_) => RslStatus::NotApplicable,
        Error::SuperhedgeViolation { .. } => RslStatus::SuperhedgeViolation,
        Error::Unsupported(_) => RslStatus::Unsupported,
        Error::Io { .. } => RslStatus::Io,
    }
}

/// Opaque handle to an uncertainty specification.
pub struct RslSpec {
    spec: UncertaintySpec,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RslStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn set_last_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("NUL bytes removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Run `body`, record its error message, and map panics to a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RslStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(None);
            RslStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(Some(format!("panic: {msg}")));
            RslStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(RslStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(RslStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(name)),
        (false, _) => Ok(std::slice::from_raw_parts(p, len)),
    }
}

unsafe fn spec_arg<'a>(p: *const RslSpec) -> Result<&'a UncertaintySpec, Failure> {
    p.as_ref().map(|h| &h.spec).ok_or_else(|| null("spec"))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Failure(RslStatus::Io, e.to_string()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn rsl_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version and report schema, as a static string.
#[no_mangle]
pub extern "C" fn rsl_version() -> *const c_char {
    static VERSION: &CStr = c"0.1.0 (report schema rsl/1)";
    VERSION.as_ptr()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rsl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a spec from model TOML text.
///
/// # Safety
/// `toml` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsl_spec_from_toml(toml: *const c_char, out: *mut *mut RslSpec) -> RslStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ModelConfig::from_toml(text)?.build()?;
        write_out(out, Box::into_raw(Box::new(RslSpec { spec })), "out")
    })
}

/// Release a spec. Null is ignored.
///
/// # Safety
/// `spec` must come from [`rsl_spec_from_toml`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rsl_spec_free(spec: *mut RslSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// State dimension and number of parameters.
///
/// # Safety
/// `spec` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsl_spec_dims(spec: *const RslSpec, dim: *mut usize, n_params: *mut usize) -> RslStatus {
    guard(|| {
        let s = spec_arg(spec)?;
        write_out(dim, s.dim(), "dim")?;
        write_out(n_params, s.param_box.dims(), "n_params")
    })
}

/// Drift (`d` values) and diffusion (`d²`, row-major) at parameter `f`, time
/// `t` and state `x`, taking `x` as the whole path so far.
///
/// # Safety
/// Arrays must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn rsl_spec_coefficients(
    spec: *const RslSpec,
    f: *const f64,
    n_f: usize,
    t: f64,
    x: *const f64,
    n_x: usize,
    b_out: *mut f64,
    a_out: *mut f64,
) -> RslStatus {
    guard(|| {
        let s = spec_arg(spec)?;
        let f = slice_arg(f, n_f, "f")?;
        let x = slice_arg(x, n_x, "x")?;
        let d = s.dim();
        if n_f != s.param_box.dims() || n_x != d {
            return Err(Failure(
                RslStatus::Domain,
                format!("expected {} parameters and {d} states, got {n_f} and {n_x}", s.param_box.dims()),
            ));
        }
        if b_out.is_null() || a_out.is_null() {
            return Err(null("b_out/a_out"));
        }
        let mut b = vec![0.0; d];
        let mut a = vec![0.0; d * d];
        let dt = s.horizon / 64.0;
        s.eval_into(f, t, &PathView::new(dt, d, x), &mut b, &mut a)?;
        ptr::copy_nonoverlapping(b.as_ptr(), b_out, d);
        ptr::copy_nonoverlapping(a.as_ptr(), a_out, d * d);
        Ok(())
    })
}

/// Run every condition certifier; `json_out` receives the certificates.
///
/// # Safety
/// `spec` must be a live handle; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsl_certify(
    spec: *const RslSpec,
    budget: usize,
    seed: u64,
    json_out: *mut *mut c_char,
) -> RslStatus {
    guard(|| {
        let s = spec_arg(spec)?;
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let certs = certify_all(s, &CertifyOptions { budget, seed, ..Default::default() })?;
        write_out(json_out, to_c_string(to_json_string(&certs)?)?, "json_out")
    })
}

/// Superhedging price and initial hedge ratio of `payoff` (an expression in
/// `X` and `max_X`) on a lattice with `n_steps` steps.
///
/// # Safety
/// `spec` must be a live handle; `payoff` a valid C string; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rsl_superhedge(
    spec: *const RslSpec,
    payoff: *const c_char,
    n_steps: usize,
    price_out: *mut f64,
    hedge_out: *mut f64,
) -> RslStatus {
    guard(|| {
        let s = spec_arg(spec)?;
        let payoff = Payoff::parse(str_arg(payoff, "payoff")?)?;
        let cfg = LatticeConfig { n_steps, ..Default::default() };
        cfg.validate()?;
        let surface = superhedge(s, &payoff, &cfg)?;
        write_out(price_out, surface.root_value(), "price_out")?;
        write_out(hedge_out, surface.initial_hedge().first().copied().unwrap_or(0.0), "hedge_out")
    })
}

fn utility_value(
    spec: &UncertaintySpec,
    utility: &str,
    z: f64,
    n_steps: usize,
    seed: u64,
    dual: bool,
) -> Result<f64, Failure> {
    let u: UtilitySpec = utility.parse()?;
    let cfg = LatticeConfig { n_steps, ..Default::default() };
    cfg.validate()?;
    let certs = certify_all(spec, &CertifyOptions { seed, ..Default::default() })?;
    let surface = if dual {
        dual_value(spec, &u, &[z], &cfg, &certs)?
    } else {
        primal_value(spec, &u, &[z], &cfg, &certs)?
    };
    Ok(surface.eval_initial(z)?)
}

/// Robust primal value `u(x)` for `utility` (`log`, `power:<p>`, `exp:<λ>`).
///
/// # Safety
/// `spec` must be a live handle; `utility` a valid C string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rsl_primal_value(
    spec: *const RslSpec,
    utility: *const c_char,
    x: f64,
    n_steps: usize,
    seed: u64,
    out: *mut f64,
) -> RslStatus {
    guard(|| {
        let v = utility_value(spec_arg(spec)?, str_arg(utility, "utility")?, x, n_steps, seed, false)?;
        write_out(out, v, "out")
    })
}

/// Robust dual value `v(y)`.
///
/// # Safety
/// As for [`rsl_primal_value`].
#[no_mangle]
pub unsafe extern "C" fn rsl_dual_value(
    spec: *const RslSpec,
    utility: *const c_char,
    y: f64,
    n_steps: usize,
    seed: u64,
    out: *mut f64,
) -> RslStatus {
    guard(|| {
        let v = utility_value(spec_arg(spec)?, str_arg(utility, "utility")?, y, n_steps, seed, true)?;
        write_out(out, v, "out")
    })
}

/// Run an experiment config (TOML text, one engine section) and return its
/// `report.json` contents. No files are written. `*passed` is set to 1 when
/// the report passes. A relative model path is resolved against the working
/// directory.
///
/// # Safety
/// `config_toml` must be a valid C string; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsl_run_experiment(
    config_toml: *const c_char,
    json_out: *mut *mut c_char,
    passed: *mut i32,
) -> RslStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_toml(str_arg(config_toml, "config_toml")?)?;
        if json_out.is_null() || passed.is_null() {
            return Err(null("json_out/passed"));
        }
        let report = execute(&cfg, None)?;
        write_out(passed, report.pass as i32, "passed")?;
        write_out(json_out, to_c_string(report.render()?)?, "json_out")
    })
}
