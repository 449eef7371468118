//! C ABI over the marbin engine.
//!
//! Every fallible call returns an `MbStatus` and writes results through out
//! pointers. On failure a message is kept per thread and can be read with
//! `mb_last_error`. Handles are opaque and must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use marbin::config_space::expectation;
use marbin::hedging::{ls_oracle, optimal_strategy, Market, MarketParams};
use marbin::malliavin::variance;
use marbin::stein::{dna_bound, exact_tv, head_run_bound};
use marbin::{Error, ModelParams, PathFunctional, Space};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbStatus {
    Ok = 0,
    InvalidParam = 1,
    EnumerationTooLarge = 2,
    ExactModeRequired = 3,
    OutOfRange = 4,
    NullPointer = 5,
    Singular = 6,
    Unsupported = 7,
    Panic = 8,
    Other = 9,
}

/// Enumerated sample space of a marked binomial process.
pub struct MbSpace {
    inner: Arc<Space>,
}

/// Real functional tabulated on an `MbSpace`.
pub struct MbFunctional {
    inner: PathFunctional,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MbStatus {
    match e {
        Error::InvalidParam(_) | Error::Config(_) | Error::MeanMismatch { .. } | Error::CenterFirst(_) => {
            MbStatus::InvalidParam
        }
        Error::EnumerationTooLarge { .. } => MbStatus::EnumerationTooLarge,
        Error::ExactModeRequired => MbStatus::ExactModeRequired,
        Error::OutOfRange(_) | Error::BadSupport | Error::MarkSpaceSize(_) => MbStatus::OutOfRange,
        Error::Singular => MbStatus::Singular,
        Error::UnsupportedForm(_) | Error::NotPredictable(_) | Error::DegenerateMark(_) => MbStatus::Unsupported,
        _ => MbStatus::Other,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard<F: FnOnce() -> Result<(), MbStatus>>(f: F) -> MbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MbStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            MbStatus::Panic
        }
    }
}

fn fail(e: Error) -> MbStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null() -> MbStatus {
    set_error("null pointer argument");
    MbStatus::NullPointer
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], MbStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), MbStatus> {
    if out.is_null() {
        return Err(null());
    }
    *out = v;
    Ok(())
}

/// Message of the last failed call on this thread; empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds the enumerated space for horizon `horizon`, `n_marks` marks with
/// probabilities `mark_probs`, and jump probability `lambda`.
///
/// # Safety
/// `marks` and `mark_probs` must point to `n_marks` readable doubles and `out`
/// must be writable. The handle written to `out` must be released with
/// `mb_space_free`.
#[no_mangle]
pub unsafe extern "C" fn mb_space_new(
    horizon: usize,
    marks: *const f64,
    mark_probs: *const f64,
    n_marks: usize,
    lambda: f64,
    out: *mut *mut MbSpace,
) -> MbStatus {
    guard(|| {
        let m = slice(marks, n_marks)?.to_vec();
        let q = slice(mark_probs, n_marks)?.to_vec();
        let params = ModelParams::new(horizon, m, lambda, q, 0).map_err(fail)?;
        let space = Space::new(params).map_err(fail)?;
        write(out, Box::into_raw(Box::new(MbSpace { inner: space })))
    })
}

/// # Safety
/// `space` must be null or a handle from `mb_space_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mb_space_free(space: *mut MbSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of configurations, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_space_size(space: *const MbSpace) -> usize {
    space.as_ref().map_or(0, |s| s.inner.size())
}

/// Functional from a table of `len` values indexed by configuration rank.
///
/// # Safety
/// `space` must be a live handle, `values` must point to `len` doubles and
/// `out` must be writable. Release the result with `mb_functional_free`.
#[no_mangle]
pub unsafe extern "C" fn mb_functional_from_table(
    space: *const MbSpace,
    values: *const f64,
    len: usize,
    out: *mut *mut MbFunctional,
) -> MbStatus {
    guard(|| {
        let s = space.as_ref().ok_or_else(null)?;
        let v = slice(values, len)?.to_vec();
        let f = PathFunctional::from_table(&s.inner, v).map_err(fail)?;
        write(out, Box::into_raw(Box::new(MbFunctional { inner: f })))
    })
}

/// Jump count N_t.
///
/// # Safety
/// `space` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_functional_counting(space: *const MbSpace, t: usize, out: *mut *mut MbFunctional) -> MbStatus {
    guard(|| {
        let s = space.as_ref().ok_or_else(null)?;
        if t > s.inner.horizon() {
            return Err(fail(Error::OutOfRange(format!("time {t}"))));
        }
        let f = PathFunctional::counting(&s.inner, t);
        write(out, Box::into_raw(Box::new(MbFunctional { inner: f })))
    })
}

/// # Safety
/// `f` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mb_functional_free(f: *mut MbFunctional) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// E[F].
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_expectation(f: *const MbFunctional, out: *mut f64) -> MbStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(null)?;
        write(out, expectation(&f.inner).map_err(fail)?)
    })
}

/// Var[F].
///
/// # Safety
/// `f` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mb_variance(f: *const MbFunctional, out: *mut f64) -> MbStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(null)?;
        write(out, variance(&f.inner).map_err(fail)?)
    })
}

/// Total variation distance between two pmfs on {0, 1, ...}.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_exact_tv(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut f64) -> MbStatus {
    guard(|| {
        let (a, b) = (slice(a, na)?, slice(b, nb)?);
        write(out, exact_tv(a, b).map_err(fail)?)
    })
}

/// Poisson approximation bound for head runs of length `m` in `n+1` tosses.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_head_run_bound(n: usize, m: usize, p: f64, out: *mut f64) -> MbStatus {
    guard(|| {
        if !(p > 0.0 && p < 1.0) || m == 0 || m > n {
            return Err(fail(Error::InvalidParam("need 0 < p < 1 and 1 <= m <= n".into())));
        }
        write(out, head_run_bound(n, m, p))
    })
}

/// Compound Poisson bound for DNA clump counts.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_dna_bound(n: usize, h: usize, alpha: f64, mu: f64, out: *mut f64) -> MbStatus {
    guard(|| write(out, dna_bound(n, h, alpha, mu).map_err(fail)?))
}

/// Quadratic hedging risk of the call (S_T − strike)₊ in the ternary market:
/// the optimal-strategy residual and the least-squares oracle minimum.
///
/// # Safety
/// `residual` and `oracle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mb_hedge_call_residual(
    a: f64,
    b: f64,
    r: f64,
    lambda: f64,
    p: f64,
    horizon: usize,
    strike: f64,
    x: f64,
    residual: *mut f64,
    oracle: *mut f64,
) -> MbStatus {
    guard(|| {
        if residual.is_null() || oracle.is_null() {
            return Err(null());
        }
        let params = MarketParams::new(a, b, r, lambda, p, horizon, x, 1.0).map_err(fail)?;
        let market = Market::new(params).map_err(fail)?;
        let claim = market.european_call(strike);
        let opt = optimal_strategy(&market, &claim, x).map_err(fail)?;
        let (_, best) = ls_oracle(&market, &claim, x).map_err(fail)?;
        write(residual, opt.residual_risk)?;
        write(oracle, best)
    })
}
