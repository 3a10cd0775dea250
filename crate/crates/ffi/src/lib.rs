//! C ABI over `astpa`.
//!
//! Estimators are opaque handles created from a registry problem id or from a
//! linear limit state in standard Gaussian space. Every function returns an
//! [`AstpaStatus`]; on failure [`astpa_last_error`] describes what went wrong
//! on the calling thread. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use astpa::bench::lookup;
use astpa::density::{IndependentGaussian, LogDensity};
use astpa::estimator::{run_astpa, AstpaConfig, Budget, ProblemSetup, SamplerKind};
use astpa::limit_state::{LimitStateKind, LimitStateProblem};
use astpa::target::AstpaParams;
use astpa::Error;
use nalgebra::DVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AstpaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownProblem = 3,
    EstimationFailed = 4,
    Panic = 5,
}

pub const ASTPA_SAMPLER_QNP: u32 = 0;
pub const ASTPA_SAMPLER_HMC: u32 = 1;

/// Opaque estimator handle.
pub struct AstpaEstimator {
    setup: ProblemSetup,
    config: AstpaConfig,
}

/// Result of one estimation run. `cov` is NaN when no analytical C.o.V is
/// available.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AstpaResult {
    pub p_f: f64,
    pub log_p_f: f64,
    pub cov: f64,
    pub n_total: u64,
    pub ess_min: f64,
    pub accept_rate: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AstpaStatus {
    match e {
        Error::UnknownProblem(_) => AstpaStatus::UnknownProblem,
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::NonFinite | Error::Config(_) => {
            AstpaStatus::InvalidArgument
        }
        _ => AstpaStatus::EstimationFailed,
    }
}

/// Runs `f` with panics and errors turned into a status.
fn guard(f: impl FnOnce() -> Result<(), (AstpaStatus, String)>) -> AstpaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AstpaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AstpaStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (AstpaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (AstpaStatus, String) {
    (AstpaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (AstpaStatus, String) {
    (AstpaStatus::InvalidArgument, msg.into())
}

fn sampler(code: u32) -> Result<SamplerKind, (AstpaStatus, String)> {
    match code {
        ASTPA_SAMPLER_QNP => Ok(SamplerKind::Qnp),
        ASTPA_SAMPLER_HMC => Ok(SamplerKind::Hmc),
        other => Err(invalid(format!("unknown sampler code {other}"))),
    }
}

unsafe fn handle<'a>(h: *mut AstpaEstimator) -> Result<&'a mut AstpaEstimator, (AstpaStatus, String)> {
    h.as_mut().ok_or_else(|| null("estimator"))
}

fn publish(out: *mut *mut AstpaEstimator, est: AstpaEstimator) {
    // SAFETY: callers check `out` for null first
    unsafe { *out = Box::into_raw(Box::new(est)) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn astpa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn astpa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Estimator for a registry problem (`"ex3-d2-r2"`, ...) with its tabulated
/// parameters and budget.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_from_registry(
    id: *const c_char,
    sampler_code: u32,
    out: *mut *mut AstpaEstimator,
) -> AstpaStatus {
    guard(|| {
        if id.is_null() {
            return Err(null("id"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let id = CStr::from_ptr(id).to_str().map_err(|_| invalid("id is not UTF-8"))?;
        let spec = lookup(id).map_err(lib_err)?;
        let kind = sampler(sampler_code)?;
        let setup = spec.setup().map_err(lib_err)?;
        publish(out, AstpaEstimator { setup, config: spec.config(kind) });
        Ok(())
    })
}

/// Estimator for `g(x) = offset + coeffsᵀx` with `x ~ N(0, I_dim)`, where
/// `P(g ≤ 0) = Φ(-offset/‖coeffs‖)`.
///
/// # Safety
/// `coeffs` must point to `dim` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_linear_gaussian(
    dim: usize,
    offset: f64,
    coeffs: *const f64,
    sampler_code: u32,
    n_total: u64,
    out: *mut *mut AstpaEstimator,
) -> AstpaStatus {
    guard(|| {
        if coeffs.is_null() {
            return Err(null("coeffs"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let coeffs = std::slice::from_raw_parts(coeffs, dim).to_vec();
        let kind = sampler(sampler_code)?;
        let model: Arc<dyn LogDensity> = Arc::new(IndependentGaussian::standard(dim).map_err(lib_err)?);
        let limit_state = LimitStateProblem::new(LimitStateKind::Linear { offset, coeffs }, dim).map_err(lib_err)?;
        let setup = ProblemSetup {
            model,
            limit_state,
            transform: None,
            mean: DVector::zeros(dim),
            adam_start: None,
            log_c_pi: None,
        };
        let params = AstpaParams::new(0.3, 10.0).map_err(lib_err)?;
        let config = AstpaConfig::new(params, kind, Budget::total(n_total));
        publish(out, AstpaEstimator { setup, config });
        Ok(())
    })
}

/// Dimension of the estimator's problem.
///
/// # Safety
/// `h` must come from a constructor and `dim` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_dim(h: *mut AstpaEstimator, dim: *mut usize) -> AstpaStatus {
    guard(|| {
        let est = handle(h)?;
        let dim = dim.as_mut().ok_or_else(|| null("dim"))?;
        *dim = est.setup.mean.len();
        Ok(())
    })
}

/// Sets the likelihood spread `sigma` and the `g_c` quantile `q`.
///
/// # Safety
/// `h` must come from a constructor.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_set_params(h: *mut AstpaEstimator, sigma: f64, q: f64) -> AstpaStatus {
    guard(|| {
        let est = handle(h)?;
        est.config.params = AstpaParams::new(sigma, q).map_err(lib_err)?;
        Ok(())
    })
}

/// Sets the total number of limit-state calls per run.
///
/// # Safety
/// `h` must come from a constructor.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_set_budget(h: *mut AstpaEstimator, n_total: u64) -> AstpaStatus {
    guard(|| {
        let est = handle(h)?;
        if n_total == 0 {
            return Err(invalid("n_total must be positive"));
        }
        est.config.budget = Budget::total(n_total);
        Ok(())
    })
}

/// One estimation run; identical seeds give identical results.
///
/// # Safety
/// `h` must come from a constructor and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_run(h: *mut AstpaEstimator, seed: u64, out: *mut AstpaResult) -> AstpaStatus {
    guard(|| {
        let est = handle(h)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = run_astpa(&est.setup, &est.config, seed).map_err(lib_err)?;
        *out = AstpaResult {
            p_f: r.p_f,
            log_p_f: r.log_p_f,
            cov: r.cov.unwrap_or(f64::NAN),
            n_total: r.n_total,
            ess_min: r.ess_min,
            accept_rate: r.accept_rate,
        };
        Ok(())
    })
}

/// One estimation run returning the full report as JSON. Free the string
/// with [`astpa_string_free`].
///
/// # Safety
/// `h` must come from a constructor and `json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_run_json(h: *mut AstpaEstimator, seed: u64, json: *mut *mut c_char) -> AstpaStatus {
    guard(|| {
        let est = handle(h)?;
        if json.is_null() {
            return Err(null("json"));
        }
        let r = run_astpa(&est.setup, &est.config, seed).map_err(lib_err)?;
        let text = serde_json::to_string(&r).map_err(|e| lib_err(e.into()))?;
        *json = CString::new(text).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn astpa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Frees an estimator. Null is ignored.
///
/// # Safety
/// `h` must come from a constructor and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn astpa_estimator_free(h: *mut AstpaEstimator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}
