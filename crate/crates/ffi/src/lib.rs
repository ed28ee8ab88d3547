//! C ABI for the solver and the alignment arithmetic.
//!
//! Conventions:
//! - Every fallible function returns a [`DpgenStatus`]; on failure
//!   [`dpgen_last_error`] describes it. The message is thread-local and
//!   stays valid until the next failing call on the same thread.
//! - Handles are opaque and owned by the caller once returned; release
//!   them with the matching `*_free` function. Freeing NULL is a no-op.
//! - Strings returned to the caller are released with [`dpgen_string_free`].
//! - Panics never cross the boundary; they surface as `DPGEN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpgen::mdp::{
    backward_induction, enumerate_policies, execute_solution, parse_and_validate, policy_iteration,
    relative_value_iteration, solve, value_iteration, Backend, ExecStatus, IterationOptions, SolutionCode,
    SolveError, SolveOutcome, ValidatedSpec,
};
use dpgen::Tolerance;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpgenStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidSpec = 3,
    HorizonMismatch = 4,
    NonConvergence = 5,
    Singular = 6,
    TooLarge = 7,
    InvalidArgument = 8,
    ExecutionFailed = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpgenMethod {
    /// Backward induction, policy iteration or relative value iteration by horizon.
    Auto = 0,
    BackwardInduction = 1,
    ValueIteration = 2,
    PolicyIteration = 3,
    RelativeValueIteration = 4,
    Enumerate = 5,
}

/// A validated model.
pub struct DpgenSpec {
    inner: ValidatedSpec,
}

/// The result of a solve.
pub struct DpgenOutcome {
    inner: SolveOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (DpgenStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DpgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpgenStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DpgenStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    (DpgenStatus::NullArgument, format!("{name} is NULL"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (DpgenStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

fn solve_failure(e: SolveError) -> Failure {
    let status = match &e {
        SolveError::InvalidSpec(_) => DpgenStatus::InvalidSpec,
        SolveError::HorizonMismatch { .. } => DpgenStatus::HorizonMismatch,
        SolveError::NonConvergence { .. } => DpgenStatus::NonConvergence,
        SolveError::SingularEvaluation => DpgenStatus::Singular,
        SolveError::TooLarge { .. } => DpgenStatus::TooLarge,
    };
    (status, e.to_string())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior NULs removed").into_raw()
}

/// Last error message on this thread, or NULL if none.
#[no_mangle]
pub extern "C" fn dpgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dpgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a JSON model.
///
/// # Safety
/// `json` must be NULL or a NUL-terminated string; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_spec_parse(json: *const c_char, out_spec: *mut *mut DpgenSpec) -> DpgenStatus {
    guard(|| {
        let slot = out(out_spec, "out_spec")?;
        *slot = ptr::null_mut();
        let inner = parse_and_validate(text(json, "json")?).map_err(|e| (DpgenStatus::InvalidSpec, e.to_string()))?;
        *slot = Box::into_raw(Box::new(DpgenSpec { inner }));
        Ok(())
    })
}

/// # Safety
/// `spec` must be NULL or a handle from [`dpgen_spec_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgen_spec_free(spec: *mut DpgenSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// # Safety
/// `spec` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_spec_state_count(spec: *const DpgenSpec, out_count: *mut usize) -> DpgenStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(spec, "spec")?.inner.state_count();
        Ok(())
    })
}

/// Solves `spec` with `method`.
///
/// # Safety
/// `spec` must be a live handle; `out_outcome` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_solve(
    spec: *const DpgenSpec,
    method: DpgenMethod,
    out_outcome: *mut *mut DpgenOutcome,
) -> DpgenStatus {
    guard(|| {
        let slot = out(out_outcome, "out_outcome")?;
        *slot = ptr::null_mut();
        let v = &handle(spec, "spec")?.inner;
        let opts = IterationOptions::default();
        let inner = match method {
            DpgenMethod::Auto => solve(v),
            DpgenMethod::BackwardInduction => backward_induction(v),
            DpgenMethod::ValueIteration => value_iteration(v, opts),
            DpgenMethod::PolicyIteration => policy_iteration(v),
            DpgenMethod::RelativeValueIteration => relative_value_iteration(v, opts),
            DpgenMethod::Enumerate => enumerate_policies(v),
        }
        .map_err(solve_failure)?;
        *slot = Box::into_raw(Box::new(DpgenOutcome { inner }));
        Ok(())
    })
}

/// # Safety
/// `outcome` must be NULL or a handle from [`dpgen_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgen_outcome_free(outcome: *mut DpgenOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}

/// # Safety
/// `outcome` must be a live handle; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_outcome_value(outcome: *const DpgenOutcome, out_value: *mut f64) -> DpgenStatus {
    guard(|| {
        *out(out_value, "out_value")? = handle(outcome, "outcome")?.inner.value;
        Ok(())
    })
}

/// # Safety
/// `outcome` must be a live handle; `out_iterations` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_outcome_iterations(outcome: *const DpgenOutcome, out_iterations: *mut u64) -> DpgenStatus {
    guard(|| {
        *out(out_iterations, "out_iterations")? = handle(outcome, "outcome")?.inner.iterations;
        Ok(())
    })
}

/// # Safety
/// `outcome` must be a live handle; `out_residual` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_outcome_residual(outcome: *const DpgenOutcome, out_residual: *mut f64) -> DpgenStatus {
    guard(|| {
        *out(out_residual, "out_residual")? = handle(outcome, "outcome")?.inner.residual;
        Ok(())
    })
}

/// Value, policy and value function as JSON. Free with [`dpgen_string_free`].
///
/// # Safety
/// `outcome` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_outcome_to_json(outcome: *const DpgenOutcome, out_json: *mut *mut c_char) -> DpgenStatus {
    guard(|| {
        let slot = out(out_json, "out_json")?;
        *slot = ptr::null_mut();
        let json = serde_json::to_string(&handle(outcome, "outcome")?.inner)
            .map_err(|e| (DpgenStatus::InvalidArgument, e.to_string()))?;
        *slot = into_c_string(json);
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dpgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs a JSON model through the in-process interpreter and returns its
/// answer. Scripts are not accepted over this interface.
///
/// # Safety
/// `json` must be NULL or NUL-terminated; `out_answer` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_execute_spec(json: *const c_char, out_answer: *mut f64) -> DpgenStatus {
    guard(|| {
        let slot = out(out_answer, "out_answer")?;
        let code = SolutionCode::spec(text(json, "json")?);
        let result = execute_solution(&code, &Backend::SpecInterpreter);
        match (result.status, result.answer) {
            (ExecStatus::Ok, Some(y)) => {
                *slot = y;
                Ok(())
            }
            (status, _) => {
                let code = if status == ExecStatus::InvalidSpec { DpgenStatus::InvalidSpec } else { DpgenStatus::ExecutionFailed };
                Err((code, format!("{status}: {}", result.detail.unwrap_or_default())))
            }
        }
    })
}

/// Token-frequency cosine similarity with numbers masked, in [0, 1].
///
/// # Safety
/// `a` and `b` must be NULL or NUL-terminated; `out_similarity` writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_text_similarity(a: *const c_char, b: *const c_char, out_similarity: *mut f64) -> DpgenStatus {
    guard(|| {
        *out(out_similarity, "out_similarity")? = dpgen::corpus::text_similarity(text(a, "a")?, text(b, "b")?);
        Ok(())
    })
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Group-normalised advantages; writes `len` values to `out_advantages`.
///
/// # Safety
/// `rewards` and `out_advantages` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dpgen_grpo_advantages(rewards: *const f64, len: usize, out_advantages: *mut f64) -> DpgenStatus {
    guard(|| {
        let r = slice(rewards, len, "rewards")?;
        if out_advantages.is_null() {
            return Err(null("out_advantages"));
        }
        let adv = dpgen::align::grpo_advantages(r).map_err(|e| (DpgenStatus::InvalidArgument, e.to_string()))?;
        std::slice::from_raw_parts_mut(out_advantages, len).copy_from_slice(&adv.advantages);
        Ok(())
    })
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
#[no_mangle]
pub extern "C" fn dpgen_grpo_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    dpgen::align::grpo_surrogate(ratio, advantage, epsilon)
}

/// Preference loss; pass zeros for the reference terms for the
/// reference-free form.
#[no_mangle]
pub extern "C" fn dpgen_dpo_loss(
    logp_policy_chosen: f64,
    logp_policy_rejected: f64,
    logp_ref_chosen: f64,
    logp_ref_rejected: f64,
    beta: f64,
) -> f64 {
    dpgen::align::dpo_loss(logp_policy_chosen, logp_policy_rejected, logp_ref_chosen, logp_ref_rejected, beta)
}

/// Strict-plurality vote under the default tolerance. NaN entries count as
/// missing answers. `out_found` is false on a tie or when nothing is present.
///
/// # Safety
/// `answers` must point to `len` doubles; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpgen_majority_vote(
    answers: *const f64,
    len: usize,
    out_found: *mut bool,
    out_value: *mut f64,
) -> DpgenStatus {
    guard(|| {
        let a: Vec<Option<f64>> = slice(answers, len, "answers")?.iter().map(|x| (!x.is_nan()).then_some(*x)).collect();
        let found = out(out_found, "out_found")?;
        let value = out(out_value, "out_value")?;
        match dpgen::forward::majority_vote(&a, Tolerance::default()) {
            Some(v) => {
                *found = true;
                *value = v;
            }
            None => {
                *found = false;
                *value = f64::NAN;
            }
        }
        Ok(())
    })
}
