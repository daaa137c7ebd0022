//! C ABI over `lmtp-core`.
//!
//! Objects cross the boundary as opaque handles created by `lmtp_*_new`-style
//! constructors and released with the matching `lmtp_*_free`. Every fallible
//! call returns an [`LmtpStatus`]; on failure the message is available from
//! [`lmtp_last_error`] on the same thread. Strings returned through `char **`
//! out-parameters are owned by the caller and released with
//! [`lmtp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lmtp_core::cli::parse_contrast;
use lmtp_core::data::{LongitudinalDataset, StackedEstimate};
use lmtp_core::inference::{run_inference, InferenceConfig};
use lmtp_core::policy::Policy;
use lmtp_core::sdr::{estimate_pair, EstimatorConfig};
use lmtp_core::simulation::{analytic_truth, generate_seeded, DgpParams};
use lmtp_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmtpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Estimation = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// A longitudinal dataset.
pub struct LmtpDataset {
    inner: LongitudinalDataset,
}

/// An intervention policy.
pub struct LmtpPolicy {
    inner: Policy,
}

/// Stacked trajectory estimates of two policies with their influence
/// function values.
pub struct LmtpEstimate {
    inner: StackedEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LmtpStatus {
    match err {
        Error::Io(_) => LmtpStatus::Io,
        Error::Numerical(_) | Error::Singular(_) | Error::DegenerateContrast { .. } => LmtpStatus::Numerical,
        Error::Estimation { .. } | Error::Calibration(_) => LmtpStatus::Estimation,
        _ => LmtpStatus::InvalidInput,
    }
}

struct Fail(LmtpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LmtpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LmtpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LmtpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
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
            LmtpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LmtpStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(LmtpStatus::Numerical, "output contains a nul byte".into()))
}

fn json_string<T: serde::Serialize>(v: &T) -> Result<*mut c_char, Fail> {
    c_string(serde_json::to_string(v).map_err(Error::from)?)
}

/// Message of the last failed call on this thread, or null if the last call
/// succeeded. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn lmtp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn lmtp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lmtp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a wide-format CSV file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut LmtpDataset,
) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = LongitudinalDataset::load_csv(path)?;
        *out = Box::into_raw(Box::new(LmtpDataset { inner }));
        Ok(())
    })
}

/// Parses wide-format CSV text.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_dataset_from_csv(
    text: *const c_char,
    out: *mut *mut LmtpDataset,
) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = str_arg(text, "text")?;
        let inner = LongitudinalDataset::from_csv_str(text)?;
        *out = Box::into_raw(Box::new(LmtpDataset { inner }));
        Ok(())
    })
}

/// Draws `n` individuals from the built-in linear-Gaussian process with
/// default parameters at effect size `beta`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_dataset_simulate(
    beta: f64,
    n: usize,
    seed: u64,
    out: *mut *mut LmtpDataset,
) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let params = DgpParams::calibrated(beta)?;
        let inner = generate_seeded(&params, n, seed)?;
        *out = Box::into_raw(Box::new(LmtpDataset { inner }));
        Ok(())
    })
}

/// Writes the number of individuals and time points.
///
/// # Safety
/// `data` must be a live dataset handle; `n` and `tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_dataset_shape(
    data: *const LmtpDataset,
    n: *mut usize,
    tau: *mut usize,
) -> LmtpStatus {
    guard(|| {
        let d = data.as_ref().ok_or_else(|| null("data"))?;
        *out_ptr(n, "n")? = d.inner.n();
        *out_ptr(tau, "tau")? = d.inner.tau();
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmtp_dataset_free(data: *mut LmtpDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Parses a policy: `identity`, `shift:<x>`, `shift:<x>,bound=<c>`,
/// `shift:<x>,bound=L{t}_<j>` or `threshold:<floor>`.
///
/// # Safety
/// `spec` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_policy_parse(spec: *const c_char, out: *mut *mut LmtpPolicy) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = Policy::parse(str_arg(spec, "spec")?)?;
        *out = Box::into_raw(Box::new(LmtpPolicy { inner }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmtp_policy_free(policy: *mut LmtpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Estimates both trajectories. `config_json` is an estimator configuration
/// as JSON, or null for the defaults.
///
/// # Safety
/// Handles must be live; `config_json` null or nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_estimate_pair(
    data: *const LmtpDataset,
    policy_prime: *const LmtpPolicy,
    policy_dprime: *const LmtpPolicy,
    config_json: *const c_char,
    out: *mut *mut LmtpEstimate,
) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let d = data.as_ref().ok_or_else(|| null("data"))?;
        let a = policy_prime.as_ref().ok_or_else(|| null("policy_prime"))?;
        let b = policy_dprime.as_ref().ok_or_else(|| null("policy_dprime"))?;
        let config: EstimatorConfig = if config_json.is_null() {
            EstimatorConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Fail(LmtpStatus::InvalidInput, format!("config_json: {e}")))?
        };
        let pair = estimate_pair(&d.inner, &a.inner, &b.inner, &config)?;
        *out = Box::into_raw(Box::new(LmtpEstimate { inner: pair.stacked }));
        Ok(())
    })
}

/// Number of time points of an estimate.
///
/// # Safety
/// `est` must be a live handle; `tau` writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_estimate_tau(est: *const LmtpEstimate, tau: *mut usize) -> LmtpStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        *out_ptr(tau, "tau")? = e.inner.tau();
        Ok(())
    })
}

/// Copies `(theta'_1..theta'_tau, theta''_1..theta''_tau)` into `out`,
/// which must hold `len >= 2 tau` values.
///
/// # Safety
/// `est` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lmtp_estimate_theta(
    est: *const LmtpEstimate,
    out: *mut f64,
    len: usize,
) -> LmtpStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let theta = &e.inner.theta_hat;
        if len < theta.len() {
            return Err(Fail(
                LmtpStatus::InvalidInput,
                format!("buffer holds {len} values, need {}", theta.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, theta.len()).copy_from_slice(theta);
        Ok(())
    })
}

/// Runs the Wald, max and local tests for `contrast` (`baseline`,
/// `adjacent` or `file:<path>`) at level `alpha` and returns the report as
/// JSON.
///
/// # Safety
/// `est` must be a live handle; `contrast` nul-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_inference_json(
    est: *const LmtpEstimate,
    contrast: *const c_char,
    alpha: f64,
    out_json: *mut *mut c_char,
) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out_json, "out_json")?;
        let e = est.as_ref().ok_or_else(|| null("estimate"))?;
        let k = parse_contrast(str_arg(contrast, "contrast")?, e.inner.tau())?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Fail(
                LmtpStatus::InvalidInput,
                format!("alpha must be in (0, 1), got {alpha}"),
            ));
        }
        let cfg = InferenceConfig {
            alpha,
            ..InferenceConfig::default()
        };
        let report = run_inference(&e.inner, &k, None, &cfg)?;
        *out = json_string(&report)?;
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmtp_estimate_free(est: *mut LmtpEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Analytic trajectories, effects and calibrated gamma of the built-in
/// process at effect size `beta`, as JSON.
///
/// # Safety
/// `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lmtp_truth_json(beta: f64, out_json: *mut *mut c_char) -> LmtpStatus {
    guard(|| {
        let out = out_ptr(out_json, "out_json")?;
        let truth = analytic_truth(&DgpParams::calibrated(beta)?)?;
        *out = json_string(&truth)?;
        Ok(())
    })
}
