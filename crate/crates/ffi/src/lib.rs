//! C ABI over `metapac`.
//!
//! Every fallible call returns a [`MetapacStatus`] and writes its result
//! through an out-pointer. On failure, [`metapac_last_error`] describes the
//! most recent error on the calling thread. Thresholds cross the boundary as
//! `double`, with `+∞` as `INFINITY`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use metapac::{Error, GuaranteeSpec, ScoreSample, TaskCalibrationBundle};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetapacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidScore = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Validated score sample.
pub struct MetapacScoreSample {
    inner: ScoreSample,
}

/// Ordered collection of per-task calibration samples.
pub struct MetapacTaskSet {
    bundles: Vec<TaskCalibrationBundle>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> MetapacStatus {
    match err {
        Error::InvalidScore { .. } => MetapacStatus::InvalidScore,
        _ => MetapacStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MetapacStatus>) -> MetapacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MetapacStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            MetapacStatus::Panic
        }
    }
}

fn fail(err: Error) -> MetapacStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(what: &str) -> MetapacStatus {
    set_error(format!("{what} is null"));
    MetapacStatus::NullPointer
}

unsafe fn scores_from<'a>(scores: *const f64, len: usize) -> Result<&'a [f64], MetapacStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if scores.is_null() {
        return Err(null("scores"));
    }
    Ok(std::slice::from_raw_parts(scores, len))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), MetapacStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or null if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn metapac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Binomial CDF `P(X <= k)` for `X ~ Binomial(m, p)`.
///
/// # Safety
/// `out` must be valid for a write of one `double`.
#[no_mangle]
pub unsafe extern "C" fn metapac_binom_cdf(k: u64, m: u64, p: f64, out: *mut f64) -> MetapacStatus {
    guard(|| write(out, metapac::binom_cdf(k, m, p).map_err(fail)?))
}

/// One-sided Clopper-Pearson upper bound for `k` failures in `m` trials.
///
/// # Safety
/// `out` must be valid for a write of one `double`.
#[no_mangle]
pub unsafe extern "C" fn metapac_cp_upper_bound(k: u64, m: u64, delta: f64, out: *mut f64) -> MetapacStatus {
    guard(|| write(out, metapac::cp_upper_bound(k, m, delta).map_err(fail)?))
}

/// Copies `len` scores into a new sample.
///
/// # Safety
/// `scores` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn metapac_sample_new(
    scores: *const f64,
    len: usize,
    out: *mut *mut MetapacScoreSample,
) -> MetapacStatus {
    guard(|| {
        let scores = scores_from(scores, len)?;
        let inner = ScoreSample::new(scores.to_vec()).map_err(fail)?;
        write(out, Box::into_raw(Box::new(MetapacScoreSample { inner })))
    })
}

/// # Safety
/// `sample` must come from [`metapac_sample_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn metapac_sample_free(sample: *mut MetapacScoreSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// # Safety
/// `sample` must be null or a live sample.
#[no_mangle]
pub unsafe extern "C" fn metapac_sample_len(sample: *const MetapacScoreSample) -> usize {
    sample.as_ref().map_or(0, |s| s.inner.len())
}

/// PS-Binom threshold of `sample` at `(eps, delta)`.
///
/// # Safety
/// `sample` must be a live sample; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn metapac_ps_binom(
    sample: *const MetapacScoreSample,
    eps: f64,
    delta: f64,
    out: *mut f64,
) -> MetapacStatus {
    guard(|| {
        let s = sample.as_ref().ok_or_else(|| null("sample"))?;
        let tau = metapac::ps_binom(&s.inner, eps, delta).map_err(fail)?;
        write(out, tau.value())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn metapac_task_set_new(out: *mut *mut MetapacTaskSet) -> MetapacStatus {
    guard(|| write(out, Box::into_raw(Box::new(MetapacTaskSet { bundles: Vec::new() }))))
}

/// # Safety
/// `set` must come from [`metapac_task_set_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn metapac_task_set_free(set: *mut MetapacTaskSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be null or a live task set.
#[no_mangle]
pub unsafe extern "C" fn metapac_task_set_len(set: *const MetapacTaskSet) -> usize {
    set.as_ref().map_or(0, |s| s.bundles.len())
}

/// Appends one task's calibration scores.
///
/// # Safety
/// `set` must be a live task set; `scores` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn metapac_task_set_push(
    set: *mut MetapacTaskSet,
    scores: *const f64,
    len: usize,
) -> MetapacStatus {
    guard(|| {
        let set = set.as_mut().ok_or_else(|| null("set"))?;
        let scores = scores_from(scores, len)?;
        let sample = ScoreSample::new(scores.to_vec()).map_err(fail)?;
        set.bundles.push(TaskCalibrationBundle::from_scores(sample));
        Ok(())
    })
}

fn spec_for(set: &MetapacTaskSet, eps: f64, alpha: f64, delta: f64) -> GuaranteeSpec {
    GuaranteeSpec {
        eps,
        alpha,
        delta,
        num_tasks: set.bundles.len(),
        calib_size: set.bundles.iter().map(|b| b.calibration_scores.len()).min().unwrap_or(0),
        adapt_size: 0,
    }
}

/// Meta-PS threshold over every task in `set`. When `per_task` is non-null it
/// receives the per-task thresholds, in push order, and must hold
/// `per_task_len >= metapac_task_set_len(set)` entries.
///
/// # Safety
/// `set` must be a live task set; `out` must be writable; `per_task`, when
/// non-null, must be writable for `per_task_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn metapac_meta_ps(
    set: *const MetapacTaskSet,
    eps: f64,
    alpha: f64,
    delta: f64,
    out: *mut f64,
    per_task: *mut f64,
    per_task_len: usize,
) -> MetapacStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !per_task.is_null() && per_task_len < set.bundles.len() {
            set_error(format!("per_task holds {per_task_len} entries, {} needed", set.bundles.len()));
            return Err(MetapacStatus::BufferTooSmall);
        }
        let cal = metapac::meta_calibrate(&set.bundles, &spec_for(set, eps, alpha, delta)).map_err(fail)?;
        if !per_task.is_null() {
            let dst = std::slice::from_raw_parts_mut(per_task, set.bundles.len());
            for (d, t) in dst.iter_mut().zip(&cal.per_task_thresholds) {
                *d = t.value();
            }
        }
        write(out, cal.threshold.value())
    })
}

/// PS-Binom over the pooled scores of every task in `set`.
///
/// # Safety
/// `set` must be a live task set; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn metapac_pooled_ps(
    set: *const MetapacTaskSet,
    eps: f64,
    delta: f64,
    out: *mut f64,
) -> MetapacStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let tau = metapac::pooled_ps(&set.bundles, eps, delta).map_err(fail)?;
        write(out, tau.value())
    })
}
