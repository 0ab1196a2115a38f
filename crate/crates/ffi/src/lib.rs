//! C interface to the probe-based moment extraction library.
//!
//! The surface follows the usual C conventions for a Rust core:
//!
//! - Field states live behind the opaque handle [`QpField`], created by the
//!   `qp_field_*` constructors and released with [`qp_field_free`].
//! - Every fallible call returns a [`QpStatus`]; results travel through out
//!   pointers that are written only on [`QpStatus::Ok`].
//! - On failure a human-readable message is stored per thread and can be
//!   fetched with [`qp_last_error_message`]. Strings returned by this library
//!   are heap-allocated C strings owned by the caller; release them with
//!   `qp_string_free`.
//! - Extraction entry points run the noiseless protocol on the default tau
//!   grid (21 points on [-1, 1]) with the step-halving extrapolation
//!   estimator. Shot sampling, dissipation and estimator tuning are reached
//!   through [`qp_scenario_run`], which accepts the same scenario text as the
//!   CLI and returns the results JSON.
//!
//! The generated header is written to `include/qprobe.h` by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use num_complex::Complex64;
use qprobe::evolution::linear_grid;
use qprobe::extraction::{
    extract_duan, extract_n, extract_second_moments, extract_x, extract_y, DerivMethod, RunPlan,
};
use qprobe::opsalg::DensityOperator;
use qprobe::scenario::{
    self, build_report, compile, execute, parse_scenario, render_results_json, summarize,
    utc_timestamp, write_artifacts, CliOverrides,
};
use qprobe::states::{build_field, FieldStateSpec};
use qprobe::QpError;

/// Outcome of a library call. `InvalidInput` and `NumericalBreakdown` carry
/// the same meaning as the CLI exit codes 2 and 3.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    /// The call succeeded and all out parameters are valid.
    Ok = 0,
    /// A parameter, scenario file or state was rejected before compute.
    InvalidInput = 2,
    /// The computation started but broke down numerically (truncation
    /// leakage, non-converged integration, failed factorization).
    NumericalBreakdown = 3,
    /// A required pointer argument was null.
    NullPointer = 4,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 5,
    /// An internal invariant failed; the library state is still consistent,
    /// but the call did nothing.
    Panicked = 6,
}

/// Opaque field-state handle: a validated density operator on one or two
/// truncated modes, together with its truncation leakage.
pub struct QpField {
    rho: DensityOperator,
    leakage: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn record_error(msg: &str) {
    let sanitized;
    let msg = if msg.as_bytes().contains(&0) {
        sanitized = msg.replace('\0', "?");
        &sanitized
    } else {
        msg
    };
    let c = CString::new(msg).expect("nul bytes were just replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(err: &QpError) -> QpStatus {
    record_error(&err.to_string());
    match scenario::exit_code(err) {
        3 => QpStatus::NumericalBreakdown,
        _ => QpStatus::InvalidInput,
    }
}

fn null_pointer() -> QpStatus {
    record_error("null pointer argument");
    QpStatus::NullPointer
}

fn guarded<F: FnOnce() -> QpStatus>(f: F) -> QpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .copied()
                .or_else(|| payload.downcast_ref::<String>().map(String::as_str))
                .unwrap_or("unknown panic");
            record_error(&format!("internal panic: {msg}"));
            QpStatus::Panicked
        }
    }
}

fn into_c_string(s: String) -> *mut c_char {
    match CString::new(s) {
        Ok(c) => c.into_raw(),
        Err(e) => {
            let bytes: Vec<u8> =
                e.into_vec().into_iter().map(|b| if b == 0 { b'?' } else { b }).collect();
            CString::new(bytes).expect("nul bytes were just replaced").into_raw()
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, QpStatus> {
    if ptr.is_null() {
        return Err(null_pointer());
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        record_error(&format!("{what} is not valid UTF-8"));
        QpStatus::InvalidUtf8
    })
}

fn default_plan() -> Result<RunPlan, QpError> {
    Ok(RunPlan::noiseless(linear_grid(-1.0, 1.0, 21)?))
}

unsafe fn build_handle(
    spec: FieldStateSpec,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    if out.is_null() {
        return null_pointer();
    }
    *out = ptr::null_mut();
    match build_field(&spec, truncation as usize, leakage_tol) {
        Ok(state) => {
            *out = Box::into_raw(Box::new(QpField { rho: state.rho, leakage: state.leakage }));
            QpStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Version of the underlying library as a static string. Do not free.
#[no_mangle]
pub extern "C" fn qp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the most recent failure on the calling thread, or null if no
/// call has failed yet. The returned copy is owned by the caller; release it
/// with `qp_string_free`.
#[no_mangle]
pub extern "C" fn qp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(ptr::null_mut(), |msg| msg.clone().into_raw())
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library's string-returning
/// functions, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number state |n>.
///
/// # Safety
/// `out` must be a valid pointer to a `QpField*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_field_fock(
    n: u32,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guarded(|| build_handle(FieldStateSpec::Fock(n as usize), truncation, leakage_tol, out))
}

/// Coherent state with amplitude `re + i im`.
///
/// # Safety
/// `out` must be a valid pointer to a `QpField*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_field_coherent(
    re: f64,
    im: f64,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guarded(|| {
        build_handle(FieldStateSpec::Coherent(Complex64::new(re, im)), truncation, leakage_tol, out)
    })
}

/// Thermal mixture with mean occupation `nbar`.
///
/// # Safety
/// `out` must be a valid pointer to a `QpField*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_field_thermal(
    nbar: f64,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guarded(|| build_handle(FieldStateSpec::Thermal(nbar), truncation, leakage_tol, out))
}

/// Squeezed vacuum with squeeze parameter `r e^{i theta}`.
///
/// # Safety
/// `out` must be a valid pointer to a `QpField*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_field_squeezed_vacuum(
    r: f64,
    theta: f64,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guarded(|| {
        build_handle(FieldStateSpec::SqueezedVacuum { r, theta }, truncation, leakage_tol, out)
    })
}

/// Superposition of opposite coherent states,
/// `(|alpha> + e^{i phase} |-alpha>) / norm` with `alpha = re + i im`.
///
/// # Safety
/// `out` must be a valid pointer to a `QpField*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_field_cat(
    re: f64,
    im: f64,
    phase: f64,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guarded(|| {
        build_handle(
            FieldStateSpec::Cat { alpha: Complex64::new(re, im), phase },
            truncation,
            leakage_tol,
            out,
        )
    })
}

/// Two-mode squeezed vacuum with squeeze parameter `r`. The handle occupies
/// the joint space of both modes with `truncation` levels each.
///
/// # Safety
/// `out` must be a valid pointer to a `QpField*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_field_two_mode_squeezed_vacuum(
    r: f64,
    truncation: u32,
    leakage_tol: f64,
    out: *mut *mut QpField,
) -> QpStatus {
    guarded(|| {
        build_handle(FieldStateSpec::TwoModeSqueezedVacuum { r }, truncation, leakage_tol, out)
    })
}

/// Release a field handle. Null is ignored.
///
/// # Safety
/// `field` must be null or a handle from a `qp_field_*` constructor, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn qp_field_free(field: *mut QpField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of modes the handle occupies, or 0 if `field` is null.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_field_modes(field: *const QpField) -> u32 {
    if field.is_null() {
        return 0;
    }
    (*field).rho.space().subsystems() as u32
}

/// Probability weight the truncation cut off before renormalization, or NaN
/// if `field` is null.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qp_field_leakage(field: *const QpField) -> f64 {
    if field.is_null() {
        return f64::NAN;
    }
    (*field).leakage
}

unsafe fn extract_first_moment(
    field: *const QpField,
    phi: f64,
    out_value: *mut f64,
    out_error: *mut f64,
    which: fn(&DensityOperator, f64, &RunPlan, &DerivMethod) -> qprobe::Result<MomentPair>,
) -> QpStatus {
    if field.is_null() || out_value.is_null() || out_error.is_null() {
        return null_pointer();
    }
    let plan = match default_plan() {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    match which(&(*field).rho, phi, &plan, &DerivMethod::default_evaluable()) {
        Ok((value, error)) => {
            *out_value = value;
            *out_error = error;
            QpStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

type MomentPair = (f64, f64);

fn x_moment(
    rho: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> qprobe::Result<MomentPair> {
    let r = extract_x(rho, phi, plan, method)?;
    Ok((r.extracted, r.error_estimate))
}

fn y_moment(
    rho: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> qprobe::Result<MomentPair> {
    let r = extract_y(rho, phi, plan, method)?;
    Ok((r.extracted, r.error_estimate))
}

/// Quadrature mean `<X_phi>` of a single-mode state, with the estimator's
/// error estimate.
///
/// # Safety
/// `field` must be a live handle; `out_value` and `out_error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qp_extract_x(
    field: *const QpField,
    phi: f64,
    out_value: *mut f64,
    out_error: *mut f64,
) -> QpStatus {
    guarded(|| extract_first_moment(field, phi, out_value, out_error, x_moment))
}

/// Conjugate quadrature mean `<Y_phi>` of a single-mode state, with the
/// estimator's error estimate.
///
/// # Safety
/// `field` must be a live handle; `out_value` and `out_error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qp_extract_y(
    field: *const QpField,
    phi: f64,
    out_value: *mut f64,
    out_error: *mut f64,
) -> QpStatus {
    guarded(|| extract_first_moment(field, phi, out_value, out_error, y_moment))
}

/// Mean photon number of a single-mode state, with the estimator's error
/// estimate.
///
/// # Safety
/// `field` must be a live handle; `out_value` and `out_error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qp_extract_n(
    field: *const QpField,
    out_value: *mut f64,
    out_error: *mut f64,
) -> QpStatus {
    guarded(|| {
        if field.is_null() || out_value.is_null() || out_error.is_null() {
            return null_pointer();
        }
        let plan = match default_plan() {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        match extract_n(&(*field).rho, &plan, &DerivMethod::default_evaluable()) {
            Ok(r) => {
                *out_value = r.extracted;
                *out_error = r.error_estimate;
                QpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Second moments `<X_phi^2>` and `<Y_phi^2>` of a single-mode state.
/// Both come from the same two-run protocol and share the error estimate.
///
/// # Safety
/// `field` must be a live handle; `out_x2`, `out_y2` and `out_error` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qp_extract_second_moments(
    field: *const QpField,
    phi: f64,
    out_x2: *mut f64,
    out_y2: *mut f64,
    out_error: *mut f64,
) -> QpStatus {
    guarded(|| {
        if field.is_null() || out_x2.is_null() || out_y2.is_null() || out_error.is_null() {
            return null_pointer();
        }
        let plan = match default_plan() {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        match extract_second_moments(&(*field).rho, phi, &plan, &DerivMethod::default_evaluable())
        {
            Ok((x2, y2)) => {
                *out_x2 = x2.extracted;
                *out_y2 = y2.extracted;
                *out_error = x2.error_estimate;
                QpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Run the full separability protocol on a two-mode state and evaluate the
/// variance-sum criterion with quadrature weight `a0` and sign choices `s1`,
/// `s2` (each +1 or -1). `violates` is set when the sum undercuts the
/// separable bound `a0^2 + 1/a0^2` by more than `tol`.
///
/// # Safety
/// `field` must be a live handle; `out_sum`, `out_bound` and `out_violates`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn qp_check_duan(
    field: *const QpField,
    a0: f64,
    s1: f64,
    s2: f64,
    tol: f64,
    out_sum: *mut f64,
    out_bound: *mut f64,
    out_violates: *mut bool,
) -> QpStatus {
    guarded(|| {
        if field.is_null() || out_sum.is_null() || out_bound.is_null() || out_violates.is_null() {
            return null_pointer();
        }
        let plan = match default_plan() {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        match extract_duan(&(*field).rho, a0, s1, s2, &plan, &DerivMethod::default_evaluable(), tol)
        {
            Ok((verdict, _, _)) => {
                *out_sum = verdict.sum;
                *out_bound = verdict.bound;
                *out_violates = verdict.violates;
                QpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parse, validate and execute a scenario given as TOML text.
///
/// `source` labels the text in error messages (pass the file name; null for
/// a generic label). When `out_dir` is non-null the artifact tree
/// (`results.json` plus per-run CSVs) is written under `<out_dir>/<name>/`
/// exactly as the CLI would. When `out_json` is non-null it receives the
/// results JSON; release it with `qp_string_free`.
///
/// A truncation leakage alarm behaves like the CLI: artifacts and JSON are
/// still produced, but the call returns `NumericalBreakdown`.
///
/// # Safety
/// `toml_text` must be a valid C string; `source` and `out_dir` must each be
/// null or a valid C string; `out_json` must be null or a valid pointer to a
/// `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_scenario_run(
    toml_text: *const c_char,
    source: *const c_char,
    out_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> QpStatus {
    guarded(|| {
        if !out_json.is_null() {
            *out_json = ptr::null_mut();
        }
        let text = match read_str(toml_text, "scenario text") {
            Ok(t) => t,
            Err(status) => return status,
        };
        let source = if source.is_null() {
            "scenario"
        } else {
            match read_str(source, "source label") {
                Ok(s) => s,
                Err(status) => return status,
            }
        };
        let run = || -> Result<(String, bool), QpError> {
            let scenario = parse_scenario(source, text)?;
            let compiled = compile(&scenario, source, &CliOverrides::default())?;
            let executed = execute(&compiled)?;
            let (report, csvs) = build_report(&compiled, &executed);
            let json = render_results_json(&report, &utc_timestamp())?;
            if !out_dir.is_null() {
                let dir = read_str(out_dir, "output directory")
                    .map_err(|_| QpError::Validation("output directory is not valid UTF-8".into()))?;
                write_artifacts(&report, &csvs, Path::new(dir))?;
            }
            Ok((json, report.leakage_alarm))
        };
        match run() {
            Ok((json, alarm)) => {
                if !out_json.is_null() {
                    *out_json = into_c_string(json);
                }
                if alarm {
                    record_error("truncation leakage alarm (see results.json)");
                    QpStatus::NumericalBreakdown
                } else {
                    QpStatus::Ok
                }
            }
            Err(e) => fail(&e),
        }
    })
}

/// Parse and validate a scenario without computing anything. On success
/// `out_summary` (if non-null) receives the same cost summary the CLI's
/// `validate` subcommand prints; release it with `qp_string_free`.
///
/// # Safety
/// `toml_text` must be a valid C string; `source` must be null or a valid C
/// string; `out_summary` must be null or a valid pointer to a `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_scenario_validate(
    toml_text: *const c_char,
    source: *const c_char,
    out_summary: *mut *mut c_char,
) -> QpStatus {
    guarded(|| {
        if !out_summary.is_null() {
            *out_summary = ptr::null_mut();
        }
        let text = match read_str(toml_text, "scenario text") {
            Ok(t) => t,
            Err(status) => return status,
        };
        let source = if source.is_null() {
            "scenario"
        } else {
            match read_str(source, "source label") {
                Ok(s) => s,
                Err(status) => return status,
            }
        };
        let compiled = parse_scenario(source, text)
            .and_then(|scenario| compile(&scenario, source, &CliOverrides::default()));
        match compiled {
            Ok(compiled) => {
                if !out_summary.is_null() {
                    *out_summary = into_c_string(summarize(&compiled));
                }
                QpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Resolve a bundled scenario name or a scenario file path to its TOML text.
/// Release the text with `qp_string_free`.
///
/// # Safety
/// `name_or_path` must be a valid C string; `out_toml` must be a valid
/// pointer to a `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_scenario_source(
    name_or_path: *const c_char,
    out_toml: *mut *mut c_char,
) -> QpStatus {
    guarded(|| {
        if out_toml.is_null() {
            return null_pointer();
        }
        *out_toml = ptr::null_mut();
        let arg = match read_str(name_or_path, "scenario name") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match scenario::resolve_source(arg) {
            Ok((_, text)) => {
                *out_toml = into_c_string(text);
                QpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Names and descriptions of the scenarios compiled into the library, one
/// per line. Release the text with `qp_string_free`.
///
/// # Safety
/// `out` must be a valid pointer to a `char*` slot.
#[no_mangle]
pub unsafe extern "C" fn qp_bundled_list(out: *mut *mut c_char) -> QpStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer();
        }
        *out = into_c_string(scenario::list_bundled());
        QpStatus::Ok
    })
}
