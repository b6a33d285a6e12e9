//! C ABI over the experiment runner.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every fallible call returns an [`RsrisStatus`]; the message of the
//! last failure on the calling thread is available from
//! [`rsris_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rsris::config::ExperimentConfig;
use rsris::experiment::{plot_csv, run_experiment, write_outputs, ExperimentResult};
use rsris::realdec::IqiParams;
use rsris::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsrisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Infeasible = 4,
    Solver = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Parsed experiment configuration.
pub struct RsrisConfig {
    inner: ExperimentConfig,
}

/// Outcome of an experiment run.
pub struct RsrisResult {
    inner: ExperimentResult,
    labels: Vec<CString>,
}

/// One aggregated row of a result table.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RsrisRow {
    pub sweep_value: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub trials: usize,
    pub failures: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> RsrisStatus {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Dimension(_) => RsrisStatus::Config,
        Error::Infeasible(_) => RsrisStatus::Infeasible,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => RsrisStatus::Io,
        _ => RsrisStatus::Solver,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RsrisStatus, String)>) -> RsrisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RsrisStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RsrisStatus::Panic
        }
    }
}

fn lift(e: Error) -> (RsrisStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RsrisStatus, String) {
    (RsrisStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RsrisStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RsrisStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rsris_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rsris_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsris_config_from_toml(text: *const c_char, out: *mut *mut RsrisConfig) -> RsrisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = read_str(text, "text")?;
        let inner = ExperimentConfig::from_toml_str(text).map_err(lift)?;
        *out = Box::into_raw(Box::new(RsrisConfig { inner }));
        Ok(())
    })
}

/// Overrides the trial count.
///
/// # Safety
/// `cfg` must come from [`rsris_config_from_toml`].
#[no_mangle]
pub unsafe extern "C" fn rsris_config_set_trials(cfg: *mut RsrisConfig, trials: usize) -> RsrisStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        if trials == 0 {
            return Err((RsrisStatus::OutOfRange, "trials must be at least 1".into()));
        }
        cfg.inner.run.trials = trials;
        Ok(())
    })
}

/// Overrides the worker thread count (0 uses every core).
///
/// # Safety
/// `cfg` must come from [`rsris_config_from_toml`].
#[no_mangle]
pub unsafe extern "C" fn rsris_config_set_threads(cfg: *mut RsrisConfig, threads: usize) -> RsrisStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.inner.run.threads = threads;
        Ok(())
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `cfg` must come from [`rsris_config_from_toml`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsris_config_free(cfg: *mut RsrisConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every scheme, sweep point and trial of the configuration.
///
/// # Safety
/// `cfg` must come from [`rsris_config_from_toml`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsris_run_experiment(cfg: *const RsrisConfig, out: *mut *mut RsrisResult) -> RsrisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let inner = run_experiment(&cfg.inner).map_err(lift)?;
        let labels = inner
            .table
            .rows
            .iter()
            .map(|r| CString::new(r.scheme.clone()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(RsrisResult { inner, labels }));
        Ok(())
    })
}

/// Number of aggregated rows; 0 for null.
///
/// # Safety
/// `res` must be null or come from [`rsris_run_experiment`].
#[no_mangle]
pub unsafe extern "C" fn rsris_result_num_rows(res: *const RsrisResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.table.rows.len())
}

/// Copies row `index` into `out`.
///
/// # Safety
/// `res` must come from [`rsris_run_experiment`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsris_result_row(res: *const RsrisResult, index: usize, out: *mut RsrisRow) -> RsrisStatus {
    guard(|| {
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = res
            .inner
            .table
            .rows
            .get(index)
            .ok_or_else(|| (RsrisStatus::OutOfRange, format!("row {index} out of range")))?;
        *out = RsrisRow {
            sweep_value: r.sweep_value,
            mean: r.mean,
            std_error: r.stderr,
            n: r.n,
            trials: r.trials,
            failures: r.failures,
        };
        Ok(())
    })
}

/// Scheme label of row `index`, owned by the result; null when out of range.
///
/// # Safety
/// `res` must be null or come from [`rsris_run_experiment`].
#[no_mangle]
pub unsafe extern "C" fn rsris_result_scheme(res: *const RsrisResult, index: usize) -> *const c_char {
    res.as_ref()
        .and_then(|r| r.labels.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Plot data as CSV text; release with [`rsris_string_free`].
///
/// # Safety
/// `res` must come from [`rsris_run_experiment`] and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsris_result_to_csv(res: *const RsrisResult, out: *mut *mut c_char) -> RsrisStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let text = plot_csv(&res.inner.table).map_err(lift)?;
        let text = CString::new(text).map_err(|e| (RsrisStatus::Io, e.to_string()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// Writes `results.csv`, traces and `summary.json` under `dir`.
///
/// # Safety
/// Handles must come from this library and `dir` be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn rsris_write_outputs(
    cfg: *const RsrisConfig,
    res: *const RsrisResult,
    dir: *const c_char,
) -> RsrisStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let res = res.as_ref().ok_or_else(|| null("res"))?;
        let dir = read_str(dir, "dir")?;
        write_outputs(&cfg.inner, &res.inner, Path::new(dir)).map_err(lift)
    })
}

/// Releases a result; null is ignored.
///
/// # Safety
/// `res` must come from [`rsris_run_experiment`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsris_result_free(res: *mut RsrisResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rsris_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Image rejection ratio `|mu|^2 / |nu|^2` of an I/Q-imbalanced branch
/// (infinite for ideal hardware).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rsris_image_rejection_ratio(epsilon: f64, phi: f64, out: *mut f64) -> RsrisStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = IqiParams::new(epsilon, phi).map_err(lift)?.image_rejection_ratio();
        Ok(())
    })
}

/// Widely linear coefficients `mu`, `nu` as `[re, im]` pairs.
///
/// # Safety
/// `mu` and `nu` must each point to two writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rsris_iqi_coefficients(epsilon: f64, phi: f64, mu: *mut f64, nu: *mut f64) -> RsrisStatus {
    guard(|| {
        if mu.is_null() || nu.is_null() {
            return Err(null("mu or nu"));
        }
        let (m, n) = IqiParams::new(epsilon, phi).map_err(lift)?.widely_linear_coeffs();
        *mu = m.re;
        *mu.add(1) = m.im;
        *nu = n.re;
        *nu.add(1) = n.im;
        Ok(())
    })
}
