//! C ABI over `crossfit-sc`.
//!
//! Every fallible call returns a [`CfscStatus`]; on failure a message is
//! available from [`cfsc_last_error`] on the same thread. Panels and results
//! are opaque heap handles released with their `_free` functions. Strings
//! returned by the library are released with [`cfsc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crossfit_sc::inference::{self, CrossFitReport, DegenerateFit, InferenceError};
use crossfit_sc::special;
use crossfit_sc::{crossfit_att, load_panel, CrossFitResult, EstimationConfig, Method, Panel};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Fold estimates coincide; the result handle is still produced but
    /// carries NaN for every variance-dependent field.
    DegenerateVariance = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfscMethod {
    Sc = 0,
    Cl = 1,
    Mcl = 2,
    Did = 3,
}

impl From<CfscMethod> for Method {
    fn from(m: CfscMethod) -> Self {
        match m {
            CfscMethod::Sc => Method::Sc,
            CfscMethod::Cl => Method::Cl,
            CfscMethod::Mcl => Method::Mcl,
            CfscMethod::Did => Method::Did,
        }
    }
}

/// Opaque panel handle.
pub struct CfscPanel {
    inner: Panel,
}

enum Outcome {
    Full(CrossFitResult),
    Degenerate(DegenerateFit),
}

/// Opaque cross-fit result handle.
pub struct CfscResult {
    outcome: Outcome,
}

impl CfscResult {
    fn report(&self) -> CrossFitReport {
        match &self.outcome {
            Outcome::Full(r) => r.report(),
            Outcome::Degenerate(d) => d.report(),
        }
    }

    fn full(&self) -> Option<&CrossFitResult> {
        match &self.outcome {
            Outcome::Full(r) => Some(r),
            Outcome::Degenerate(_) => None,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: CfscStatus, msg: impl Into<String>) -> CfscStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into `CfscStatus::Panic`.
fn guard(f: impl FnOnce() -> CfscStatus) -> CfscStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(CfscStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, CfscStatus> {
    if p.is_null() {
        return Err(fail(CfscStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CfscStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cfsc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cfsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a wide CSV panel (first column time labels, one column per unit).
///
/// # Safety
/// `path` and `treated` must be NUL-terminated strings; `out` must be a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cfsc_panel_from_csv(
    path: *const c_char,
    treated: *const c_char,
    t0: usize,
    out: *mut *mut CfscPanel,
) -> CfscStatus {
    guard(|| {
        if out.is_null() {
            return fail(CfscStatus::NullPointer, "out is null");
        }
        let (path, treated) = match (read_str(path, "path"), read_str(treated, "treated")) {
            (Ok(p), Ok(t)) => (p, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) => return fail(CfscStatus::Io, format!("{path}: {e}")),
        };
        match load_panel(BufReader::new(file), treated, t0) {
            Ok(panel) => {
                *out = Box::into_raw(Box::new(CfscPanel { inner: panel }));
                CfscStatus::Ok
            }
            Err(e) => fail(CfscStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Builds a panel from raw arrays: `treated` has `periods` entries and
/// `controls` is `periods x n_controls` in column-major order.
///
/// # Safety
/// The arrays must hold at least the stated number of doubles; `out` must
/// be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cfsc_panel_from_data(
    treated: *const f64,
    controls: *const f64,
    periods: usize,
    n_controls: usize,
    t0: usize,
    out: *mut *mut CfscPanel,
) -> CfscStatus {
    guard(|| {
        if treated.is_null() || controls.is_null() || out.is_null() {
            return fail(CfscStatus::NullPointer, "null argument");
        }
        let Some(len) = periods.checked_mul(n_controls) else {
            return fail(CfscStatus::InvalidArgument, "panel dimensions overflow");
        };
        let y = DVector::from_column_slice(std::slice::from_raw_parts(treated, periods));
        let x = DMatrix::from_column_slice(periods, n_controls, std::slice::from_raw_parts(controls, len));
        match Panel::from_columns(&y, &x, t0) {
            Ok(panel) => {
                *out = Box::into_raw(Box::new(CfscPanel { inner: panel }));
                CfscStatus::Ok
            }
            Err(e) => fail(CfscStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Number of periods, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfsc_panel_periods(panel: *const CfscPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.periods())
}

/// Number of control units, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfsc_panel_n_controls(panel: *const CfscPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.n_controls())
}

/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfsc_panel_free(panel: *mut CfscPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Cross-fitted ATT estimate. Pass NaN for `q` to use the method default.
/// On `CfscStatus::DegenerateVariance` a result is still written to `out`.
///
/// # Safety
/// `panel` must be a live handle and `out` valid writable storage.
#[no_mangle]
pub unsafe extern "C" fn cfsc_crossfit(
    panel: *const CfscPanel,
    method: CfscMethod,
    k: usize,
    alpha: f64,
    q: f64,
    tau0: f64,
    out: *mut *mut CfscResult,
) -> CfscStatus {
    guard(|| {
        let Some(panel) = panel.as_ref() else {
            return fail(CfscStatus::NullPointer, "panel is null");
        };
        if out.is_null() {
            return fail(CfscStatus::NullPointer, "out is null");
        }
        let mut cfg = EstimationConfig::new(method.into(), k).with_alpha(alpha).with_tau0(tau0);
        if !q.is_nan() {
            cfg.q = Some(q);
        }
        let (outcome, status) = match crossfit_att(&panel.inner, &cfg) {
            Ok(r) => (Outcome::Full(r), CfscStatus::Ok),
            Err(InferenceError::DegenerateVariance(d)) => {
                set_error("fold estimates coincide; no interval can be formed");
                (Outcome::Degenerate(*d), CfscStatus::DegenerateVariance)
            }
            Err(e @ InferenceError::Config(_)) => return fail(CfscStatus::InvalidArgument, e.to_string()),
            Err(e) => return fail(CfscStatus::Numeric, e.to_string()),
        };
        *out = Box::into_raw(Box::new(CfscResult { outcome }));
        status
    })
}

/// Pooled ATT, or NaN for a null handle.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfsc_result_att(res: *const CfscResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| match &r.outcome {
        Outcome::Full(f) => f.tau_hat,
        Outcome::Degenerate(d) => d.tau_hat,
    })
}

/// Scale estimate; NaN when degenerate.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfsc_result_sigma_hat(res: *const CfscResult) -> f64 {
    res.as_ref().and_then(CfscResult::full).map_or(f64::NAN, |r| r.sigma_hat)
}

/// Two-sided p-value for the null `tau = tau0`; NaN when degenerate.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfsc_result_p_value(res: *const CfscResult) -> f64 {
    res.as_ref().and_then(CfscResult::full).map_or(f64::NAN, |r| r.p_value)
}

/// Writes the interval bounds; both NaN when degenerate.
///
/// # Safety
/// `res` must be null or a live handle; `lo` and `hi` valid writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cfsc_result_ci(res: *const CfscResult, lo: *mut f64, hi: *mut f64) -> CfscStatus {
    if lo.is_null() || hi.is_null() {
        return fail(CfscStatus::NullPointer, "null output pointer");
    }
    let Some(r) = res.as_ref() else {
        return fail(CfscStatus::NullPointer, "result is null");
    };
    let (a, b) = r.full().map_or((f64::NAN, f64::NAN), |f| f.ci);
    *lo = a;
    *hi = b;
    CfscStatus::Ok
}

/// Result as a JSON object; free with [`cfsc_string_free`]. Null on error.
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfsc_result_to_json(res: *const CfscResult) -> *mut c_char {
    let Some(r) = res.as_ref() else {
        set_error("result is null");
        return ptr::null_mut();
    };
    match serde_json::to_string(&r.report()).map(CString::new) {
        Ok(Ok(s)) => s.into_raw(),
        _ => {
            set_error("serialization failed");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfsc_result_free(res: *mut CfscResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfsc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn write_value<E: std::fmt::Display>(out: *mut f64, value: Result<f64, E>) -> CfscStatus {
    if out.is_null() {
        return fail(CfscStatus::NullPointer, "out is null");
    }
    match value {
        Ok(v) => {
            *out = v;
            CfscStatus::Ok
        }
        Err(e) => fail(CfscStatus::InvalidArgument, e.to_string()),
    }
}

/// Student-t CDF.
///
/// # Safety
/// `out` must be a valid writable double.
#[no_mangle]
pub unsafe extern "C" fn cfsc_t_cdf(x: f64, df: u32, out: *mut f64) -> CfscStatus {
    guard(|| write_value(out, special::t_cdf(x, df)))
}

/// Student-t quantile.
///
/// # Safety
/// `out` must be a valid writable double.
#[no_mangle]
pub unsafe extern "C" fn cfsc_t_quantile(p: f64, df: u32, out: *mut f64) -> CfscStatus {
    guard(|| write_value(out, special::t_quantile(p, df)))
}

/// Limiting expected length of the `1 - alpha` interval with `K` folds.
///
/// # Safety
/// `out` must be a valid writable double.
#[no_mangle]
pub unsafe extern "C" fn cfsc_expected_ci_length(k: usize, alpha: f64, c0: f64, sigma: f64, out: *mut f64) -> CfscStatus {
    guard(|| write_value(out, inference::expected_ci_length(k, alpha, c0, sigma)))
}
