//! C ABI over `mss-core`.
//!
//! Claim sets and fits are opaque heap handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns an
//! [`MssStatus`]; the message of the most recent failure on the calling
//! thread is available from [`mss_last_error`]. Panics never cross the
//! boundary.
//!
//! Strings are returned by copying into caller buffers: pass the buffer and
//! its capacity, and read the required size (including the NUL) from
//! `needed`. A null buffer with zero capacity is a size query.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mss_core::inference::DEFAULT_SEED;
use mss_core::reporting::{extract_truths, source_reliability, InferenceReport, TruthEstimate};
use mss_core::{parse_claims, ClaimFormat, ClaimSet, Error, FitOptions, FitResult, Hyperparams};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MssStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Numerical = 7,
    Io = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MssClaimFormat {
    Csv = 0,
    Json = 1,
}

/// Model hyperparameters; see [`mss_hyperparams_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MssHyperparams {
    pub kappa: f64,
    pub b1: f64,
    pub b0: f64,
    pub eta_reliable: f64,
    pub theta_reliable: f64,
    pub eta_unreliable: f64,
    pub theta_unreliable: f64,
    pub truncation: usize,
}

impl From<MssHyperparams> for Hyperparams {
    fn from(h: MssHyperparams) -> Self {
        Hyperparams {
            kappa: h.kappa,
            b1: h.b1,
            b0: h.b0,
            eta_reliable: h.eta_reliable,
            theta_reliable: h.theta_reliable,
            eta_unreliable: h.eta_unreliable,
            theta_unreliable: h.theta_unreliable,
            truncation: h.truncation,
        }
    }
}

impl From<Hyperparams> for MssHyperparams {
    fn from(h: Hyperparams) -> Self {
        MssHyperparams {
            kappa: h.kappa,
            b1: h.b1,
            b0: h.b0,
            eta_reliable: h.eta_reliable,
            theta_reliable: h.theta_reliable,
            eta_unreliable: h.eta_unreliable,
            theta_unreliable: h.theta_unreliable,
            truncation: h.truncation,
        }
    }
}

/// Fit controls; see [`mss_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MssFitOptions {
    pub max_sweeps: usize,
    pub tol: f64,
    pub seed: u64,
    pub block_moves: bool,
    /// Worker threads; 0 uses the global pool. Results do not depend on it.
    pub threads: usize,
}

/// Opaque parsed claim set.
pub struct MssClaims {
    inner: ClaimSet,
}

/// Opaque fitted model.
pub struct MssFit {
    claims: ClaimSet,
    hyperparams: Hyperparams,
    options: FitOptions,
    result: FitResult,
    truths: Vec<TruthEstimate>,
    reliability: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn fail(status: MssStatus, message: impl AsRef<str>) -> MssStatus {
    set_last_error(message.as_ref());
    status
}

fn status_of(err: &Error) -> MssStatus {
    match err {
        Error::Parse { .. } | Error::Conflict { .. } | Error::EmptyInput | Error::Json(_) => MssStatus::Parse,
        Error::InvalidHyperparams(_) | Error::InvalidInput(_) => MssStatus::InvalidArgument,
        Error::OutOfRange { .. } => MssStatus::OutOfRange,
        Error::Numerical(_) | Error::AllFitsFailed(_) => MssStatus::Numerical,
        Error::Io(_) => MssStatus::Io,
    }
}

fn guard<F>(body: F) -> MssStatus
where
    F: FnOnce() -> Result<(), MssStatus>,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            MssStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(MssStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core_err(err: Error) -> MssStatus {
    fail(status_of(&err), err.to_string())
}

unsafe fn borrow<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, MssStatus> {
    ptr.as_ref().ok_or_else(|| fail(MssStatus::NullPointer, format!("{what} is null")))
}

/// Copy `s` plus a NUL into `buf` when it fits; always report the size.
unsafe fn copy_str(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), MssStatus> {
    let size = s.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if buf.is_null() || cap < size {
        return Err(fail(
            MssStatus::BufferTooSmall,
            format!("buffer holds {cap} bytes, {size} needed"),
        ));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next `mss_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mss_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable memory for one `MssHyperparams`.
#[no_mangle]
pub unsafe extern "C" fn mss_hyperparams_default(out: *mut MssHyperparams) -> MssStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| fail(MssStatus::NullPointer, "out is null"))?;
        *out = Hyperparams::default().into();
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one `MssFitOptions`.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_options_default(out: *mut MssFitOptions) -> MssStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| fail(MssStatus::NullPointer, "out is null"))?;
        let d = FitOptions::default();
        *out = MssFitOptions {
            max_sweeps: d.max_sweeps,
            tol: d.tol,
            seed: DEFAULT_SEED,
            block_moves: d.block_moves,
            threads: 0,
        };
        Ok(())
    })
}

/// Parse `len` bytes of UTF-8 claims. On success `*out` receives a handle
/// to release with [`mss_claims_free`].
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_parse(
    data: *const c_char,
    len: usize,
    format: MssClaimFormat,
    out: *mut *mut MssClaims,
) -> MssStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return Err(fail(MssStatus::NullPointer, "data or out is null"));
        }
        *out = ptr::null_mut();
        let bytes = std::slice::from_raw_parts(data.cast::<u8>(), len);
        let text = std::str::from_utf8(bytes).map_err(|e| fail(MssStatus::InvalidUtf8, e.to_string()))?;
        let format = match format {
            MssClaimFormat::Csv => ClaimFormat::Csv,
            MssClaimFormat::Json => ClaimFormat::Json,
        };
        let inner = parse_claims(text.as_bytes(), format).map_err(core_err)?;
        *out = Box::into_raw(Box::new(MssClaims { inner }));
        Ok(())
    })
}

/// # Safety
/// `claims` must be null or a handle from [`mss_claims_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_free(claims: *mut MssClaims) {
    if !claims.is_null() {
        drop(Box::from_raw(claims));
    }
}

/// Number of sources, or 0 for a null handle.
///
/// # Safety
/// `claims` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_num_sources(claims: *const MssClaims) -> usize {
    claims.as_ref().map_or(0, |c| c.inner.num_sources())
}

/// # Safety
/// `claims` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_num_objects(claims: *const MssClaims) -> usize {
    claims.as_ref().map_or(0, |c| c.inner.num_objects())
}

/// # Safety
/// `claims` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_num_claims(claims: *const MssClaims) -> usize {
    claims.as_ref().map_or(0, |c| c.inner.num_claims())
}

/// Domain size of object `m`, or 0 when out of range.
///
/// # Safety
/// `claims` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_domain_size(claims: *const MssClaims, m: usize) -> usize {
    claims
        .as_ref()
        .filter(|c| m < c.inner.num_objects())
        .map_or(0, |c| c.inner.domain_size(m))
}

/// External id of source `n`.
///
/// # Safety
/// `claims` must be a live handle; `buf` must hold `cap` writable bytes or
/// be null; `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mss_claims_source_id(
    claims: *const MssClaims,
    n: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> MssStatus {
    guard(|| {
        let cs = &borrow(claims, "claims")?.inner;
        if n >= cs.num_sources() {
            return Err(fail(MssStatus::OutOfRange, format!("source {n} of {}", cs.num_sources())));
        }
        copy_str(cs.source_id(n), buf, cap, needed)
    })
}

/// External id of object `m`.
///
/// # Safety
/// As for [`mss_claims_source_id`].
#[no_mangle]
pub unsafe extern "C" fn mss_claims_object_id(
    claims: *const MssClaims,
    m: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> MssStatus {
    guard(|| {
        let cs = &borrow(claims, "claims")?.inner;
        if m >= cs.num_objects() {
            return Err(fail(MssStatus::OutOfRange, format!("object {m} of {}", cs.num_objects())));
        }
        copy_str(cs.object(m).id(), buf, cap, needed)
    })
}

/// Label of value `k` of object `m`.
///
/// # Safety
/// As for [`mss_claims_source_id`].
#[no_mangle]
pub unsafe extern "C" fn mss_claims_value_label(
    claims: *const MssClaims,
    m: usize,
    k: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> MssStatus {
    guard(|| {
        let cs = &borrow(claims, "claims")?.inner;
        let label = (m < cs.num_objects())
            .then(|| cs.object(m).label(k))
            .flatten()
            .ok_or_else(|| fail(MssStatus::OutOfRange, format!("object {m}, value {k}")))?;
        copy_str(label, buf, cap, needed)
    })
}

/// Fit the model. Null `hyperparams` or `options` select the defaults. On
/// success `*out` receives a handle to release with [`mss_fit_free`]; the
/// fit keeps its own copy of the claims.
///
/// # Safety
/// `claims` must be a live handle; the other pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn mss_fit(
    claims: *const MssClaims,
    hyperparams: *const MssHyperparams,
    options: *const MssFitOptions,
    out: *mut *mut MssFit,
) -> MssStatus {
    guard(|| {
        let cs = &borrow(claims, "claims")?.inner;
        let out = out.as_mut().ok_or_else(|| fail(MssStatus::NullPointer, "out is null"))?;
        *out = ptr::null_mut();
        let h: Hyperparams = hyperparams.as_ref().map_or_else(Hyperparams::default, |h| (*h).into());
        let (opts, threads) = match options.as_ref() {
            Some(o) => (
                FitOptions { max_sweeps: o.max_sweeps, tol: o.tol, seed: o.seed, block_moves: o.block_moves },
                o.threads,
            ),
            None => (FitOptions::default(), 0),
        };
        let run = || mss_core::fit(cs, &h, &opts);
        let result = if threads == 0 {
            run()
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| fail(MssStatus::InvalidArgument, e.to_string()))?
                .install(run)
        }
        .map_err(core_err)?;
        let fit = MssFit {
            truths: extract_truths(&result.state),
            reliability: source_reliability(&result.state, &h),
            claims: cs.clone(),
            hyperparams: h,
            options: opts,
            result,
        };
        *out = Box::into_raw(Box::new(fit));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from [`mss_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_free(fit: *mut MssFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Final ELBO, or NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_elbo(fit: *const MssFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.result.final_elbo())
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_iterations(fit: *const MssFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.iterations)
}

/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_converged(fit: *const MssFit) -> bool {
    fit.as_ref().is_some_and(|f| f.result.converged)
}

/// MAP value index and its posterior probability for every object. Both
/// arrays must hold `len` = number of objects entries; `confidences` may be
/// null.
///
/// # Safety
/// `values` must hold `len` writable entries; `confidences` likewise or null.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_truths(
    fit: *const MssFit,
    values: *mut usize,
    confidences: *mut f64,
    len: usize,
) -> MssStatus {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        if values.is_null() {
            return Err(fail(MssStatus::NullPointer, "values is null"));
        }
        if len != fit.truths.len() {
            return Err(fail(
                MssStatus::BufferTooSmall,
                format!("expected {} entries, got {len}", fit.truths.len()),
            ));
        }
        for (i, t) in fit.truths.iter().enumerate() {
            *values.add(i) = t.value;
            if !confidences.is_null() {
                *confidences.add(i) = t.confidence;
            }
        }
        Ok(())
    })
}

/// Reliability score of every source; `len` must equal the source count.
///
/// # Safety
/// `scores` must hold `len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn mss_fit_reliability(fit: *const MssFit, scores: *mut f64, len: usize) -> MssStatus {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        if scores.is_null() {
            return Err(fail(MssStatus::NullPointer, "scores is null"));
        }
        if len != fit.reliability.len() {
            return Err(fail(
                MssStatus::BufferTooSmall,
                format!("expected {} entries, got {len}", fit.reliability.len()),
            ));
        }
        ptr::copy_nonoverlapping(fit.reliability.as_ptr(), scores, len);
        Ok(())
    })
}

/// The full report as JSON: posteriors, rankings, groups and the resolved
/// configuration.
///
/// # Safety
/// As for [`mss_claims_source_id`].
#[no_mangle]
pub unsafe extern "C" fn mss_fit_report_json(
    fit: *const MssFit,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> MssStatus {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        let config = serde_json::json!({
            "hyperparams": fit.hyperparams,
            "options": fit.options,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let report = InferenceReport::new(&fit.claims, &fit.hyperparams, &fit.result, config);
        let text = serde_json::to_string(&report).map_err(|e| core_err(e.into()))?;
        copy_str(&text, buf, cap, needed)
    })
}

/// Validate hyperparameters without fitting.
///
/// # Safety
/// `hyperparams` must be null or point to one readable `MssHyperparams`.
#[no_mangle]
pub unsafe extern "C" fn mss_hyperparams_validate(hyperparams: *const MssHyperparams) -> MssStatus {
    guard(|| {
        let h: Hyperparams = (*borrow(hyperparams, "hyperparams")?).into();
        h.validate().map_err(core_err)
    })
}

/// A copy of the last error message, for callers that prefer owned
/// strings.
///
/// # Safety
/// As for [`mss_claims_source_id`].
#[no_mangle]
pub unsafe extern "C" fn mss_last_error_copy(buf: *mut c_char, cap: usize, needed: *mut usize) -> usize {
    let msg = LAST_ERROR.with(|slot| slot.borrow().to_string_lossy().into_owned());
    let size = msg.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if !buf.is_null() && cap >= size {
        ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
        *buf.add(msg.len()) = 0;
    }
    size
}
