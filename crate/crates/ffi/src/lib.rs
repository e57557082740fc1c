//! C ABI over `iqc_peak`.
//!
//! Objects are opaque handles created by `iqc_*` constructors and released
//! with the matching `*_free` function. Every fallible call returns an
//! [`IqcErrorCode`]; the message of the most recent failure on the calling
//! thread is available from [`iqc_last_error_message`]. Strings returned to
//! the caller are released with [`iqc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use iqc_peak::analysis::{analyze_gain, analyze_reach, GainAnalysis, ReachAnalysis};
use iqc_peak::io::{CertificateDoc, Problem, ProblemFile, RequestKind};
use iqc_peak::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IqcErrorCode {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    DimensionMismatch = 5,
    InvalidUncertainty = 6,
    Infeasible = 7,
    SolverFailure = 8,
    VolumeUnbounded = 9,
    IllPosed = 10,
    BufferTooSmall = 11,
    WrongRequest = 12,
    Internal = 13,
}

/// A validated problem document.
pub struct IqcProblem {
    inner: Problem,
}

/// Result of a gain analysis.
pub struct IqcGainResult {
    inner: GainAnalysis,
}

/// Result of a reachability analysis.
pub struct IqcReachResult {
    inner: ReachAnalysis,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn code_of(e: &Error) -> IqcErrorCode {
    match e {
        Error::Parse { .. } | Error::Io { .. } => IqcErrorCode::Parse,
        Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => IqcErrorCode::DimensionMismatch,
        Error::InvalidUncertainty(_) | Error::WrongKind { .. } | Error::PointwiseRequired => {
            IqcErrorCode::InvalidUncertainty
        }
        Error::Infeasible | Error::AllInfeasible | Error::VertexUnstable { .. } => IqcErrorCode::Infeasible,
        Error::SolverFailure { .. } => IqcErrorCode::SolverFailure,
        Error::VolumeUnbounded => IqcErrorCode::VolumeUnbounded,
        Error::IllPosed { .. } => IqcErrorCode::IllPosed,
        Error::InvalidPole(_)
        | Error::InvalidOrder(_)
        | Error::UnstableFilter { .. }
        | Error::InvalidArgument(_)
        | Error::DuplicateVariable(_)
        | Error::UnknownVariable(_)
        | Error::EmptyProgram => IqcErrorCode::InvalidArgument,
    }
}

/// Runs `f`, recording failures and converting panics into
/// [`IqcErrorCode::Internal`].
fn guard<F: FnOnce() -> Result<(), (IqcErrorCode, String)>>(f: F) -> IqcErrorCode {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IqcErrorCode::Ok,
        Ok(Err((code, message))) => {
            set_last_error(message);
            code
        }
        Err(_) => {
            set_last_error("internal panic".into());
            IqcErrorCode::Internal
        }
    }
}

fn lib_err(e: Error) -> (IqcErrorCode, String) {
    (code_of(&e), e.to_string())
}

fn expect_request(p: &Problem, want: RequestKind) -> Result<(), (IqcErrorCode, String)> {
    if p.request != want {
        return Err((
            IqcErrorCode::WrongRequest,
            format!("problem requests `{}`, not `{}`", p.request.label(), want.label()),
        ));
    }
    Ok(())
}

fn null(what: &str) -> (IqcErrorCode, String) {
    (IqcErrorCode::NullPointer, format!("`{what}` is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (IqcErrorCode, String)> {
    // SAFETY: the caller passes either null or a live handle.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (IqcErrorCode, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: `out` is non-null and the caller guarantees it is writable.
    unsafe { out.write(value) };
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, (IqcErrorCode, String)> {
    CString::new(s).map(CString::into_raw).map_err(|_| (IqcErrorCode::Internal, "string contains NUL".into()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn iqc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `iqc_*` call on the same thread.
#[no_mangle]
pub extern "C" fn iqc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a JSON problem document. With `strict`, unknown
/// keys are rejected.
///
/// # Safety
/// `json` must be null or a NUL-terminated string; `out` must be null or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn iqc_problem_from_json(json: *const c_char, strict: bool, out: *mut *mut IqcProblem) -> IqcErrorCode {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| (IqcErrorCode::InvalidUtf8, e.to_string()))?;
        let (file, _) = ProblemFile::parse(text, strict).map_err(lib_err)?;
        let problem = file.build().map_err(lib_err)?;
        let handle = Box::into_raw(Box::new(IqcProblem { inner: problem }));
        // SAFETY: see the function contract.
        unsafe { write_out(out, handle, "out") }.inspect_err(|_| {
            // SAFETY: `handle` was just created by `Box::into_raw`.
            drop(unsafe { Box::from_raw(handle) });
        })
    })
}

/// # Safety
/// `problem` must be null or a handle from [`iqc_problem_from_json`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn iqc_problem_free(problem: *mut IqcProblem) {
    if !problem.is_null() {
        // SAFETY: created by `Box::into_raw` and not yet freed.
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// State dimension of the plant.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_problem_state_dim(problem: *const IqcProblem, out: *mut usize) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let p = unsafe { deref(problem, "problem") }?;
        unsafe { write_out(out, p.inner.plant.dims().nx, "out") }
    })
}

/// Runs the gain analysis configured by the problem's options. The problem
/// must request `gain`.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_analyze_gain(problem: *const IqcProblem, out: *mut *mut IqcGainResult) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let p = unsafe { deref(problem, "problem") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        expect_request(&p.inner, RequestKind::Gain)?;
        let req = p.inner.gain_request().map_err(lib_err)?;
        let analysis = analyze_gain(&p.inner.plant, &p.inner.spec, &req).map_err(lib_err)?;
        unsafe { write_out(out, Box::into_raw(Box::new(IqcGainResult { inner: analysis })), "out") }
    })
}

/// # Safety
/// `result` must be null or a live handle from [`iqc_analyze_gain`].
#[no_mangle]
pub unsafe extern "C" fn iqc_gain_free(result: *mut IqcGainResult) {
    if !result.is_null() {
        // SAFETY: created by `Box::into_raw` and not yet freed.
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Certified gain bound.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_gain_gamma(result: *const IqcGainResult, out: *mut f64) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        unsafe { write_out(out, r.inner.certificate.gamma, "out") }
    })
}

/// Decay rate of the certificate.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_gain_rho(result: *const IqcGainResult, out: *mut f64) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        unsafe { write_out(out, r.inner.certificate.rho, "out") }
    })
}

/// Basis pole of the certificate, NaN for classes without a basis.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_gain_lambda(result: *const IqcGainResult, out: *mut f64) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        unsafe { write_out(out, r.inner.certificate.lambda.unwrap_or(f64::NAN), "out") }
    })
}

/// Certificate as a JSON document (readable by `iqc-peak check`). Release
/// with [`iqc_string_free`].
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_gain_to_json(result: *const IqcGainResult, out: *mut *mut c_char) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = to_c_string(CertificateDoc::Gain(r.inner.certificate.clone()).to_json())?;
        unsafe { write_out(out, s, "out") }
    })
}

/// Runs the reachability analysis configured by the problem's options. The
/// problem must request `reach`.
///
/// # Safety
/// `problem` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_analyze_reach(problem: *const IqcProblem, out: *mut *mut IqcReachResult) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let p = unsafe { deref(problem, "problem") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        expect_request(&p.inner, RequestKind::Reach)?;
        let req = p.inner.reach_request().map_err(lib_err)?;
        let plant = p.inner.plant.without_performance();
        let analysis = analyze_reach(&plant, &p.inner.spec, &req).map_err(lib_err)?;
        unsafe { write_out(out, Box::into_raw(Box::new(IqcReachResult { inner: analysis })), "out") }
    })
}

/// # Safety
/// `result` must be null or a live handle from [`iqc_analyze_reach`].
#[no_mangle]
pub unsafe extern "C" fn iqc_reach_free(result: *mut IqcReachResult) {
    if !result.is_null() {
        // SAFETY: created by `Box::into_raw` and not yet freed.
        drop(unsafe { Box::from_raw(result) });
    }
}

/// `-log det(Qtilde)` of the certified ellipsoid.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_reach_neg_log_det(result: *const IqcReachResult, out: *mut f64) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        unsafe { write_out(out, r.inner.certificate.volume, "out") }
    })
}

/// Decay rate of the certificate.
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_reach_rho(result: *const IqcReachResult, out: *mut f64) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        unsafe { write_out(out, r.inner.certificate.rho, "out") }
    })
}

/// Copies the `nx * nx` ellipsoid matrix `Qtilde` row-major into `buf`.
/// Returns [`IqcErrorCode::BufferTooSmall`] when `len < nx * nx`.
///
/// # Safety
/// `result` must be a live handle; `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn iqc_reach_q_tilde(result: *const IqcReachResult, buf: *mut f64, len: usize) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        let q = &r.inner.certificate.q_tilde;
        let need = q.nrows() * q.ncols();
        if len < need {
            return Err((IqcErrorCode::BufferTooSmall, format!("buffer holds {len} values, {need} needed")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        // SAFETY: `buf` is writable for `len >= need` values.
        let dst = unsafe { std::slice::from_raw_parts_mut(buf, need) };
        for i in 0..q.nrows() {
            for j in 0..q.ncols() {
                dst[i * q.ncols() + j] = q[(i, j)];
            }
        }
        Ok(())
    })
}

/// Certificate as a JSON document. Release with [`iqc_string_free`].
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn iqc_reach_to_json(result: *const IqcReachResult, out: *mut *mut c_char) -> IqcErrorCode {
    guard(|| {
        // SAFETY: see the function contract.
        let r = unsafe { deref(result, "result") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = to_c_string(CertificateDoc::Reach(r.inner.certificate.clone()).to_json())?;
        unsafe { write_out(out, s, "out") }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn iqc_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by `CString::into_raw`.
        drop(unsafe { CString::from_raw(s) });
    }
}
