//! C ABI for `ctrlinv`.
//!
//! Objects are opaque handles created by `*_from_json` / `ctrlinv_synthesize`
//! and released with the matching `*_free`. Every entry point returns a
//! [`CtrlinvStatus`]; on failure `ctrlinv_last_error_message` describes the
//! error for the calling thread. Strings returned by the library are freed
//! with `ctrlinv_string_free`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};

use ctrlinv::cli::{execute, to_json_string, Overrides, Prepared, RunSettings, SystemDescription};
use ctrlinv::grid::GridSpec;
use ctrlinv::invariance::{check_local_invariance, Verdict, DEFAULT_TOLERANCE};
use ctrlinv::synthesis::{synthesize, FeedbackPair, SynthesisOptions};
use ctrlinv::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtrlinvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NotInvariant = 3,
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CtrlinvVerdict {
    Invariant = 0,
    NotInvariant = 1,
    InconclusiveSingular = 2,
}

impl From<Verdict> for CtrlinvVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Invariant => CtrlinvVerdict::Invariant,
            Verdict::NotInvariant => CtrlinvVerdict::NotInvariant,
            Verdict::InconclusiveSingular => CtrlinvVerdict::InconclusiveSingular,
        }
    }
}

/// A validated system description.
pub struct CtrlinvSystem {
    prepared: Prepared,
}

/// A synthesized feedback pair, evaluated in input coordinates.
pub struct CtrlinvFeedback {
    pair: FeedbackPair,
    prepared: Prepared,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> CtrlinvStatus {
    match e {
        Error::Syntax { .. }
        | Error::VariableOutOfRange { .. }
        | Error::Dimension { .. }
        | Error::Chart(_)
        | Error::Grid(_)
        | Error::Distribution(_)
        | Error::Input(_)
        | Error::Io(_) => CtrlinvStatus::InvalidInput,
        _ => CtrlinvStatus::Numerical,
    }
}

/// Run `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (CtrlinvStatus, String)>) -> CtrlinvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CtrlinvStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CtrlinvStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CtrlinvStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CtrlinvStatus, String) {
    (CtrlinvStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CtrlinvStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CtrlinvStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

fn grid_for(prepared: &Prepared, nodes_per_axis: size_t) -> Result<GridSpec, (CtrlinvStatus, String)> {
    let counts = prepared
        .description
        .grid_counts((nodes_per_axis > 0).then_some(nodes_per_axis))
        .map_err(lib_err)?;
    prepared.grid(&counts).map_err(lib_err)
}

/// Parse and validate a JSON system description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_system_from_json(
    json: *const c_char,
    out: *mut *mut CtrlinvSystem,
) -> CtrlinvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        let prepared = SystemDescription::from_json(text)
            .and_then(|d| d.prepare())
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CtrlinvSystem { prepared }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from `ctrlinv_system_from_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_system_free(system: *mut CtrlinvSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// State dimension, distribution rank and number of controls.
///
/// # Safety
/// `system` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_system_dims(
    system: *const CtrlinvSystem,
    n: *mut size_t,
    k: *mut size_t,
    m: *mut size_t,
) -> CtrlinvStatus {
    guard(|| {
        let s = system.as_ref().ok_or_else(|| null("system"))?;
        if n.is_null() || k.is_null() || m.is_null() {
            return Err(null("output"));
        }
        let chart = s.prepared.flat.chart();
        *n = chart.n();
        *k = chart.k();
        *m = s.prepared.flat.m();
        Ok(())
    })
}

/// Invariance test on a grid with `nodes_per_axis` nodes (0 uses the
/// description's grid) and relative tolerance `tol` (non-positive uses the
/// default).
///
/// # Safety
/// `system` must be a live handle and `verdict` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_check(
    system: *const CtrlinvSystem,
    nodes_per_axis: size_t,
    tol: f64,
    verdict: *mut CtrlinvVerdict,
) -> CtrlinvStatus {
    guard(|| {
        let s = system.as_ref().ok_or_else(|| null("system"))?;
        if verdict.is_null() {
            return Err(null("verdict"));
        }
        let grid = grid_for(&s.prepared, nodes_per_axis)?;
        let tol = if tol > 0.0 { tol } else { DEFAULT_TOLERANCE };
        let report = check_local_invariance(&s.prepared.flat, &grid, tol).map_err(lib_err)?;
        *verdict = report.verdict.into();
        Ok(())
    })
}

/// Synthesize feedback for an invariant system. Fails with
/// `CTRLINV_STATUS_NOT_INVARIANT` unless the verdict is invariant.
///
/// # Safety
/// `system` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_synthesize(
    system: *const CtrlinvSystem,
    nodes_per_axis: size_t,
    out: *mut *mut CtrlinvFeedback,
) -> CtrlinvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = system.as_ref().ok_or_else(|| null("system"))?;
        let grid = grid_for(&s.prepared, nodes_per_axis)?;
        let flat = &s.prepared.flat;
        let report = check_local_invariance(flat, &grid, DEFAULT_TOLERANCE).map_err(lib_err)?;
        if report.verdict != Verdict::Invariant {
            return Err((
                CtrlinvStatus::NotInvariant,
                format!("verdict is {:?}", report.verdict),
            ));
        }
        let mut options = SynthesisOptions::new(flat.chart());
        options.order = s.prepared.axis_order();
        let syn = synthesize(flat, &grid, &options).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CtrlinvFeedback {
            pair: syn.feedback,
            prepared: s.prepared.clone(),
        }));
        Ok(())
    })
}

/// # Safety
/// `feedback` must come from `ctrlinv_synthesize` or be null.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_feedback_free(feedback: *mut CtrlinvFeedback) {
    if !feedback.is_null() {
        drop(Box::from_raw(feedback));
    }
}

/// Evaluate `α(q)` (length `m`) and `β(q)` (`m × m`, row-major) at a point
/// `q` of length `n` in input coordinates.
///
/// # Safety
/// `q` must hold `n` doubles, `alpha` room for `m` and `beta` for `m * m`.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_feedback_eval(
    feedback: *const CtrlinvFeedback,
    q: *const f64,
    n: size_t,
    alpha: *mut f64,
    beta: *mut f64,
) -> CtrlinvStatus {
    guard(|| {
        let fb = feedback.as_ref().ok_or_else(|| null("feedback"))?;
        if q.is_null() || alpha.is_null() || beta.is_null() {
            return Err(null("buffer"));
        }
        let dim = fb.prepared.flat.chart().n();
        if n != dim {
            return Err((
                CtrlinvStatus::InvalidInput,
                format!("point has {n} coordinates, system has {dim}"),
            ));
        }
        let x = std::slice::from_raw_parts(q, n);
        let y = fb.prepared.flattening.to_chart(x);
        let (a, b) = fb.pair.eval(&y).map_err(lib_err)?;
        let m = a.len();
        std::slice::from_raw_parts_mut(alpha, m).copy_from_slice(&a);
        let out = std::slice::from_raw_parts_mut(beta, m * m);
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = b[(i, j)];
            }
        }
        Ok(())
    })
}

/// Run the whole pipeline on a JSON description and return the report as
/// JSON. `exit_code` receives the command-line exit status of the verdict.
/// Returns null on error.
///
/// # Safety
/// `json` must be a NUL-terminated string; `exit_code` may be null.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_run_json(
    json: *const c_char,
    simulate: bool,
    exit_code: *mut i32,
) -> *mut c_char {
    let mut result = ptr::null_mut();
    let status = guard(|| {
        let text = read_str(json, "json")?;
        let prepared = SystemDescription::from_json(text)
            .and_then(|d| d.prepare())
            .map_err(lib_err)?;
        let overrides = Overrides {
            simulate,
            ..Overrides::default()
        };
        let settings = RunSettings::resolve(&prepared, &overrides).map_err(lib_err)?;
        let outcome = execute(&prepared, &settings).map_err(lib_err)?;
        let s = to_json_string(&outcome.report).map_err(lib_err)?;
        if let Some(code) = exit_code.as_mut() {
            *code = outcome.exit_code();
        }
        result = CString::new(s)
            .map_err(|_| (CtrlinvStatus::Numerical, "report contains NUL".to_string()))?
            .into_raw();
        Ok(())
    });
    if status != CtrlinvStatus::Ok {
        if let Some(code) = exit_code.as_mut() {
            *code = ctrlinv::cli::EXIT_INPUT_ERROR;
        }
    }
    result
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ctrlinv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ctrlinv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
