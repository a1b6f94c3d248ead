//! C ABI for `spk-core`.
//!
//! Problems and solver results are opaque heap handles released with their
//! `*_free` function. Every entry point returns an [`SpkStatus`]; on failure
//! [`spk_last_error_message`] describes the error for the calling thread.
//! Strings returned through `char**` out-parameters are released with
//! [`spk_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DVector;
use spk_core::cq::{check_cc_mfcq, check_kkt, CqOptions};
use spk_core::oracle::{solve_constrained, solve_global, Mode};
use spk_core::psm::{write_trace_csv, PsmResult};
use spk_core::{
    project_sparse, run_psm, Error, PenaltyObjective, ProblemInstance, SolverConfig, StepsizeRule, StructuredProblem,
    Termination,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    DimensionMismatch = 3,
    InvalidProblem = 4,
    NonFinite = 5,
    Precondition = 6,
    Config = 7,
    UndefinedBound = 8,
    TooLarge = 9,
    Parse = 10,
    Io = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkRule {
    /// `α_k = p0`.
    Constant = 0,
    /// `α_k = p0 / ‖d^k‖`.
    Normalized = 1,
    /// `α_k = p0 / (k + p1)`.
    Diminishing = 2,
    /// `α_k = p1 (F^k − p0) / ‖d^k‖²`.
    Polyak = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkTermination {
    Converged = 0,
    MaxIters = 1,
    Stationary = 2,
    TargetReached = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpkMode {
    Penalized = 0,
    Constrained = 1,
}

/// Projected subgradient run options.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpkPsmOptions {
    pub rule: SpkRule,
    pub p0: f64,
    pub p1: f64,
    pub max_iters: usize,
    /// Stopping tolerance on `‖x^{k+1} − x^k‖`; negative disables the test.
    pub stop_tol: f64,
    pub record_every: usize,
    /// Initial point of length `n`, or null for the origin.
    pub x0: *const f64,
}

/// Opaque problem handle.
pub struct SpkProblem {
    structured: StructuredProblem,
    instance: ProblemInstance,
}

/// Opaque solver-result handle.
pub struct SpkPsmResult {
    inner: PsmResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = message.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> SpkStatus {
    match err {
        Error::DimensionMismatch { .. } => SpkStatus::DimensionMismatch,
        Error::InvalidProblem(_) => SpkStatus::InvalidProblem,
        Error::NonFinite(_) => SpkStatus::NonFinite,
        Error::Precondition(_) => SpkStatus::Precondition,
        Error::Config(_) => SpkStatus::Config,
        Error::UndefinedBound(_) => SpkStatus::UndefinedBound,
        Error::TooLarge(_) => SpkStatus::TooLarge,
        Error::Parse(_) | Error::Json(_) => SpkStatus::Parse,
        Error::Io(_) => SpkStatus::Io,
    }
}

struct Failure(SpkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SpkStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SpkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SpkStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {message}"));
            SpkStatus::Panic
        }
    }
}

unsafe fn problem_ref<'a>(p: *const SpkProblem) -> Result<&'a SpkProblem, Failure> {
    p.as_ref().ok_or_else(|| null("problem"))
}

unsafe fn slice<'a>(x: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if x.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(x, n))
}

unsafe fn slice_mut<'a>(x: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if x.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(x, n))
}

fn check_len(expected: usize, got: usize) -> Result<(), Failure> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got }.into());
    }
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output string pointer"));
    }
    let c = CString::new(text).map_err(|e| Failure(SpkStatus::InvalidUtf8, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn objective(p: &SpkProblem, tau: f64) -> Result<PenaltyObjective, Failure> {
    Ok(PenaltyObjective::new(p.instance.clone(), tau)?)
}

/// Message for the most recent failing call on this thread; empty after a
/// success. The pointer stays valid until the next `spk_*` call here.
#[no_mangle]
pub extern "C" fn spk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a problem from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spk_problem_from_json(json: *const c_char, out: *mut *mut SpkProblem) -> SpkStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(SpkStatus::InvalidUtf8, e.to_string()))?;
        let structured = StructuredProblem::from_json_str(text)?;
        let instance = structured.to_instance()?;
        *out = Box::into_raw(Box::new(SpkProblem { structured, instance }));
        Ok(())
    })
}

/// Releases a problem handle; null is ignored.
///
/// # Safety
/// `problem` must come from [`spk_problem_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spk_problem_free(problem: *mut SpkProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Writes `n`, `m`, `p` and `s`; any output pointer may be null.
///
/// # Safety
/// `problem` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_problem_dims(
    problem: *const SpkProblem,
    n: *mut usize,
    m: *mut usize,
    p: *mut usize,
    s: *mut usize,
) -> SpkStatus {
    guard(|| {
        let pr = problem_ref(problem)?;
        let sp = &pr.structured;
        for (dst, v) in [(n, sp.n()), (m, sp.m()), (p, sp.p()), (s, sp.sparsity)] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

/// Writes `Π_S(x)` into `out` (length `n`).
///
/// # Safety
/// `x` and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_project_sparse(x: *const f64, n: usize, s: usize, out: *mut f64) -> SpkStatus {
    guard(|| {
        let xs = slice(x, n, "x")?;
        let dst = slice_mut(out, n, "out")?;
        let y = project_sparse(&DVector::from_column_slice(xs), s);
        dst.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Evaluates `F_τ(x)`.
///
/// # Safety
/// `problem` must be live, `x` must point to `n` doubles, `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_penalty_value(
    problem: *const SpkProblem,
    tau: f64,
    x: *const f64,
    n: usize,
    value: *mut f64,
) -> SpkStatus {
    guard(|| {
        let pr = problem_ref(problem)?;
        check_len(pr.structured.n(), n)?;
        let xs = slice(x, n, "x")?;
        let dst = value.as_mut().ok_or_else(|| null("value"))?;
        *dst = objective(pr, tau)?.value(&DVector::from_column_slice(xs))?;
        Ok(())
    })
}

/// Writes the selected subgradient of `F_τ` at `x` into `d` (length `n`).
///
/// # Safety
/// `problem` must be live; `x` and `d` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_penalty_subgradient(
    problem: *const SpkProblem,
    tau: f64,
    x: *const f64,
    n: usize,
    d: *mut f64,
) -> SpkStatus {
    guard(|| {
        let pr = problem_ref(problem)?;
        check_len(pr.structured.n(), n)?;
        let xs = slice(x, n, "x")?;
        let dst = slice_mut(d, n, "d")?;
        let sel = objective(pr, tau)?.select_subgradient(&DVector::from_column_slice(xs))?;
        dst.copy_from_slice(sel.d.as_slice());
        Ok(())
    })
}

/// Runs the projected subgradient method on `F_τ`.
///
/// # Safety
/// `problem` must be live, `options` readable (its `x0` null or pointing to
/// `n` doubles), and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_run_psm(
    problem: *const SpkProblem,
    tau: f64,
    options: *const SpkPsmOptions,
    out: *mut *mut SpkPsmResult,
) -> SpkStatus {
    guard(|| {
        let pr = problem_ref(problem)?;
        let opts = options.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rule = match opts.rule {
            SpkRule::Constant => StepsizeRule::Constant { alpha: opts.p0 },
            SpkRule::Normalized => StepsizeRule::Normalized { scale: opts.p0 },
            SpkRule::Diminishing => StepsizeRule::Diminishing { a: opts.p0, b: opts.p1 },
            SpkRule::Polyak => StepsizeRule::PolyakLike {
                rho: opts.p0,
                relax: opts.p1,
            },
        };
        let initial_point = if opts.x0.is_null() {
            None
        } else {
            Some(slice(opts.x0, pr.structured.n(), "x0")?.to_vec())
        };
        let cfg = SolverConfig {
            max_iters: opts.max_iters,
            stop_tol: (opts.stop_tol >= 0.0).then_some(opts.stop_tol),
            initial_point,
            record_every: opts.record_every,
            keep_iterates: false,
        };
        let inner = run_psm(&objective(pr, tau)?, rule, &cfg, None)?;
        *out = Box::into_raw(Box::new(SpkPsmResult { inner }));
        Ok(())
    })
}

/// Releases a result handle; null is ignored.
///
/// # Safety
/// `result` must come from [`spk_run_psm`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spk_psm_result_free(result: *mut SpkPsmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Copies the final iterate into `out` (length `n`).
///
/// # Safety
/// `result` must be live and `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn spk_psm_result_x(result: *const SpkPsmResult, out: *mut f64, n: usize) -> SpkStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        check_len(r.inner.x.len(), n)?;
        slice_mut(out, n, "out")?.copy_from_slice(r.inner.x.as_slice());
        Ok(())
    })
}

/// Writes the number of steps taken, the termination reason, the number
/// of trace records and the final `F_τ`; any output pointer may be null.
///
/// # Safety
/// `result` must be live; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn spk_psm_result_info(
    result: *const SpkPsmResult,
    iterations: *mut usize,
    termination: *mut SpkTermination,
    trace_len: *mut usize,
    final_value: *mut f64,
) -> SpkStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if let Some(d) = iterations.as_mut() {
            *d = r.inner.iterations;
        }
        if let Some(d) = termination.as_mut() {
            *d = match r.inner.termination {
                Termination::Converged => SpkTermination::Converged,
                Termination::MaxIters => SpkTermination::MaxIters,
                Termination::Stationary => SpkTermination::Stationary,
                Termination::TargetReached => SpkTermination::TargetReached,
            };
        }
        if let Some(d) = trace_len.as_mut() {
            *d = r.inner.trace.len();
        }
        if let Some(d) = final_value.as_mut() {
            *d = r.inner.trace.last().map(|t| t.f).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// The trace as CSV text.
///
/// # Safety
/// `result` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_psm_result_trace_csv(result: *const SpkPsmResult, out: *mut *mut c_char) -> SpkStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let mut bytes = Vec::new();
        write_trace_csv(&mut bytes, &r.inner.trace, None)?;
        write_string(out, String::from_utf8(bytes).expect("CSV is ASCII"))
    })
}

/// Brute-force global optimum; writes the summary JSON.
///
/// # Safety
/// `problem` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_oracle_solve(
    problem: *const SpkProblem,
    tau: f64,
    mode: SpkMode,
    out: *mut *mut c_char,
) -> SpkStatus {
    guard(|| {
        let pr = problem_ref(problem)?;
        let result = match mode {
            SpkMode::Penalized => solve_global(&objective(pr, tau)?, Mode::Penalized)?,
            SpkMode::Constrained => solve_constrained(&pr.instance)?,
        };
        write_string(out, result.summary_json()?)
    })
}

/// Constraint-qualification and KKT report at `x` as JSON.
///
/// # Safety
/// `problem` must be live, `x` must point to `n` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spk_check_cq_json(
    problem: *const SpkProblem,
    x: *const f64,
    n: usize,
    out: *mut *mut c_char,
) -> SpkStatus {
    guard(|| {
        let pr = problem_ref(problem)?;
        check_len(pr.structured.n(), n)?;
        let point = DVector::from_column_slice(slice(x, n, "x")?);
        let opts = CqOptions::default();
        let mut report = check_cc_mfcq(&pr.instance, &point, &opts)?;
        report.kkt = Some(check_kkt(&pr.instance, &point, &opts)?);
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
        write_string(out, text)
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from an `spk_*` out-parameter and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
